//! Four-rooms gridworld with action slip, a configurable goal and blockable hallways.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Error, Result};

/// The classic 13x13 four-rooms map. `#` wall, `.` floor, `H` hallway.
pub const FOUR_ROOMS_MAP: &str = "\
#############
#.....#.....#
#.....#.....#
#.....H.....#
#.....#.....#
#.....#.....#
##H####.....#
#.....###H###
#.....#.....#
#.....#.....#
#.....H.....#
#.....#.....#
#############
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HallwayId {
    North,
    South,
    East,
    West,
}

impl HallwayId {
    pub const ALL: [HallwayId; 4] = [Self::North, Self::South, Self::East, Self::West];

    pub fn name(self) -> &'static str {
        match self {
            Self::North => "north",
            Self::South => "south",
            Self::East => "east",
            Self::West => "west",
        }
    }
}

impl fmt::Display for HallwayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HallwayId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "north" | "n" => Ok(Self::North),
            "south" | "s" => Ok(Self::South),
            "east" | "e" => Ok(Self::East),
            "west" | "w" => Ok(Self::West),
            other => config_err(format!("unknown hallway `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hallway {
    pub id: HallwayId,
    pub cell: Cell,
    /// Observation index of the hallway cell.
    pub state: usize,
}

/// A maximal connected region of floor cells once hallway cells are removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Room {
    /// Observation indices of the floor cells, ascending.
    pub states: Vec<usize>,
    /// Hallways bordering this room.
    pub hallways: Vec<HallwayId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Static structure of a gridworld: walls, hallways and the walkable-cell indexing.
///
/// Walkable cells are indexed row-major; that index is the observation index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    hallways: Vec<Hallway>,
    cell_to_state: Vec<Option<usize>>,
    state_to_cell: Vec<Cell>,
    rooms: Vec<Room>,
}

impl GridLayout {
    /// The built-in 13x13 four-rooms layout.
    pub fn four_rooms() -> Self {
        Self::parse(FOUR_ROOMS_MAP).expect("built-in map is valid")
    }

    /// Loads a layout by name (`four_rooms`) or from a grid file path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "four_rooms" | "fourrooms" | "four-rooms" => Ok(Self::four_rooms()),
            path => Self::from_file(path),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// Parses a plain-text grid and validates connectivity.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return config_err("empty layout");
        }
        let height = lines.len();
        let width = lines[0].chars().count();
        let mut walls = Vec::with_capacity(width * height);
        let mut hallway_cells = Vec::new();
        for (row, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return config_err(format!("row {row} has a different width than row 0"));
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' | ' ' => walls.push(false),
                    'H' => {
                        walls.push(false);
                        hallway_cells.push(Cell::new(row, col));
                    }
                    other => {
                        return config_err(format!("unexpected character `{other}` at {row},{col}"))
                    }
                }
            }
        }

        let mut cell_to_state = vec![None; width * height];
        let mut state_to_cell = Vec::new();
        for row in 0..height {
            for col in 0..width {
                if !walls[row * width + col] {
                    cell_to_state[row * width + col] = Some(state_to_cell.len());
                    state_to_cell.push(Cell::new(row, col));
                }
            }
        }
        if state_to_cell.is_empty() {
            return config_err("layout has no walkable cells");
        }

        let mut layout = Self {
            width,
            height,
            walls,
            hallways: Vec::new(),
            cell_to_state,
            state_to_cell,
            rooms: Vec::new(),
        };
        layout.hallways = layout.classify_hallways(&hallway_cells)?;
        layout.validate()?;
        layout.rooms = layout.find_rooms();
        Ok(layout)
    }

    fn classify_hallways(&self, cells: &[Cell]) -> Result<Vec<Hallway>> {
        if cells.len() > 4 {
            return config_err(format!("at most 4 hallways supported, found {}", cells.len()));
        }
        let center_r = (self.height as f64 - 1.0) / 2.0;
        let center_c = (self.width as f64 - 1.0) / 2.0;
        let mut out: Vec<Hallway> = Vec::new();
        for &cell in cells {
            let dr = cell.row as f64 - center_r;
            let dc = cell.col as f64 - center_c;
            let id = if dr.abs() > dc.abs() {
                if dr < 0.0 {
                    HallwayId::North
                } else {
                    HallwayId::South
                }
            } else if dc < 0.0 {
                HallwayId::West
            } else {
                HallwayId::East
            };
            if out.iter().any(|h| h.id == id) {
                return config_err(format!("two hallways classified as {id}"));
            }
            out.push(Hallway {
                id,
                cell,
                state: self.state(cell).expect("hallway is walkable"),
            });
        }
        out.sort_by_key(|h| h.id);
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        for (state, &cell) in self.state_to_cell.iter().enumerate() {
            if self.neighbors(cell).next().is_none() {
                return config_err(format!("cell {cell} (state {state}) has no walkable neighbor"));
            }
        }
        if !self.is_connected(None) {
            return config_err("walkable cells are not connected");
        }
        for h in &self.hallways {
            if !self.is_connected(Some(h.id)) {
                return config_err(format!("blocking the {} hallway disconnects the layout", h.id));
            }
        }
        Ok(())
    }

    fn find_rooms(&self) -> Vec<Room> {
        let hallway_states: Vec<usize> = self.hallways.iter().map(|h| h.state).collect();
        let mut room_of = vec![usize::MAX; self.num_states()];
        let mut rooms = Vec::new();
        for start in 0..self.num_states() {
            if room_of[start] != usize::MAX || hallway_states.contains(&start) {
                continue;
            }
            let id = rooms.len();
            let mut states = vec![start];
            room_of[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(s) = queue.pop_front() {
                for n in self.neighbors(self.state_to_cell[s]) {
                    let ns = self.state(n).unwrap();
                    if room_of[ns] == usize::MAX && !hallway_states.contains(&ns) {
                        room_of[ns] = id;
                        states.push(ns);
                        queue.push_back(ns);
                    }
                }
            }
            states.sort_unstable();
            rooms.push(Room {
                states,
                hallways: Vec::new(),
            });
        }
        for h in &self.hallways {
            for n in self.neighbors(h.cell) {
                let r = room_of[self.state(n).unwrap()];
                if r != usize::MAX && !rooms[r].hallways.contains(&h.id) {
                    rooms[r].hallways.push(h.id);
                }
            }
        }
        rooms
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of walkable cells; also the observation dimension.
    pub fn num_states(&self) -> usize {
        self.state_to_cell.len()
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.row >= self.height || cell.col >= self.width || self.walls[cell.row * self.width + cell.col]
    }

    /// Observation index of a walkable cell.
    pub fn state(&self, cell: Cell) -> Option<usize> {
        if cell.row >= self.height || cell.col >= self.width {
            return None;
        }
        self.cell_to_state[cell.row * self.width + cell.col]
    }

    pub fn cell(&self, state: usize) -> Cell {
        self.state_to_cell[state]
    }

    pub fn hallways(&self) -> &[Hallway] {
        &self.hallways
    }

    pub fn hallway(&self, id: HallwayId) -> Option<&Hallway> {
        self.hallways.iter().find(|h| h.id == id)
    }

    /// Hallway whose cell is `state`, if any.
    pub fn hallway_at(&self, state: usize) -> Option<HallwayId> {
        self.hallways.iter().find(|h| h.state == state).map(|h| h.id)
    }

    /// Rooms ordered by their first cell in row-major order.
    pub fn rooms(&self) -> &[Room] {
        &self.rooms
    }

    fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Action::ALL
            .into_iter()
            .filter_map(move |a| self.offset(cell, a))
            .filter(move |&c| !self.is_wall(c))
    }

    fn offset(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (r, c) = (cell.row, cell.col);
        match action {
            Action::Up => r.checked_sub(1).map(|r| Cell::new(r, c)),
            Action::Down => Some(Cell::new(r + 1, c)),
            Action::Left => c.checked_sub(1).map(|c| Cell::new(r, c)),
            Action::Right => Some(Cell::new(r, c + 1)),
        }
    }

    fn is_open(&self, state: usize, blocked: Option<HallwayId>) -> bool {
        blocked
            .and_then(|b| self.hallway(b))
            .map_or(true, |h| h.state != state)
    }

    /// Cell reached by moving from `state`; walls (and a blocked hallway) leave it in place.
    pub fn transition(&self, state: usize, action: Action, blocked: Option<HallwayId>) -> usize {
        match self.offset(self.state_to_cell[state], action).and_then(|c| self.state(c)) {
            Some(next) if self.is_open(next, blocked) => next,
            _ => state,
        }
    }

    /// BFS step counts from `from` to every state; `None` for unreachable or blocked cells.
    pub fn distances_from(&self, from: usize, blocked: Option<HallwayId>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_states()];
        if !self.is_open(from, blocked) {
            return dist;
        }
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap();
            for a in Action::ALL {
                let n = self.transition(s, a, blocked);
                if dist[n].is_none() {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Whether every open cell is reachable from every other.
    pub fn is_connected(&self, blocked: Option<HallwayId>) -> bool {
        let Some(start) = (0..self.num_states()).find(|&s| self.is_open(s, blocked)) else {
            return false;
        };
        self.distances_from(start, blocked)
            .iter()
            .enumerate()
            .all(|(s, d)| d.is_some() || !self.is_open(s, blocked))
    }

    /// States an agent may occupy with the given hallway blocked.
    pub fn open_states(&self, blocked: Option<HallwayId>) -> Vec<usize> {
        (0..self.num_states()).filter(|&s| self.is_open(s, blocked)).collect()
    }
}

/// Where to put the goal. Serialized as the string form accepted by `FromStr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GoalSpec {
    Random,
    Hallway(HallwayId),
    Cell(Cell),
}

impl GoalSpec {
    /// Resolves to an observation index, drawing uniformly over open cells for `Random`.
    pub fn resolve<R: Rng>(
        &self,
        layout: &GridLayout,
        blocked: Option<HallwayId>,
        rng: &mut R,
    ) -> Result<usize> {
        let state = match *self {
            GoalSpec::Random => {
                let open = layout.open_states(blocked);
                open[rng.gen_range(0..open.len())]
            }
            GoalSpec::Hallway(id) => match layout.hallway(id) {
                Some(h) => h.state,
                None => return config_err(format!("layout has no {id} hallway")),
            },
            GoalSpec::Cell(cell) => match layout.state(cell) {
                Some(s) => s,
                None => return config_err(format!("goal {cell} is not a walkable cell")),
            },
        };
        if !layout.is_open(state, blocked) {
            return config_err("goal lies in the blocked hallway");
        }
        Ok(state)
    }
}

impl FromStr for GoalSpec {
    type Err = Error;

    /// `random`, a hallway name (`north`), or `row,col`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("random") {
            return Ok(GoalSpec::Random);
        }
        if let Some((r, c)) = s.split_once(',') {
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad goal cell `{s}`")))
            };
            return Ok(GoalSpec::Cell(Cell::new(parse(r)?, parse(c)?)));
        }
        s.strip_prefix("hallway:")
            .unwrap_or(s)
            .parse()
            .map(GoalSpec::Hallway)
    }
}

impl TryFrom<String> for GoalSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GoalSpec> for String {
    fn from(g: GoalSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalSpec::Random => f.write_str("random"),
            GoalSpec::Hallway(id) => write!(f, "{id}"),
            GoalSpec::Cell(c) => write!(f, "{},{}", c.row, c.col),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Probability that the chosen action is replaced by a uniformly drawn one.
    pub slip: f64,
    pub goal_reward: f64,
    pub step_reward: f64,
    /// Episodes are truncated after this many steps.
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slip: 0.02,
            goal_reward: 20.0,
            step_reward: -1.0,
            max_steps: 2000,
        }
    }
}

/// One-hot observation over walkable cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub index: usize,
    pub dim: usize,
}

impl Observation {
    pub fn to_vec(self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// The goal was reached.
    pub done: bool,
    /// The step cap was hit without reaching the goal.
    pub truncated: bool,
    /// Whether the chosen action was replaced by a random draw.
    pub slipped: bool,
    pub executed: Action,
}

/// A single-owner environment instance.
#[derive(Debug, Clone)]
pub struct FourRooms {
    layout: Arc<GridLayout>,
    config: EnvConfig,
    goal: usize,
    agent: usize,
    blocked: Option<HallwayId>,
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl FourRooms {
    /// Creates an environment with a fixed goal and places the agent.
    pub fn new(
        layout: Arc<GridLayout>,
        config: EnvConfig,
        goal: usize,
        blocked: Option<HallwayId>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if goal >= layout.num_states() {
            return config_err(format!("goal state {goal} out of range"));
        }
        if !(0.0..=1.0).contains(&config.slip) {
            return config_err("slip probability must lie in [0, 1]");
        }
        if config.max_steps == 0 {
            return config_err("max_steps must be positive");
        }
        if layout.open_states(blocked).len() < 2 {
            return config_err("layout needs at least two open cells");
        }
        let mut env = Self {
            layout,
            config,
            goal,
            agent: 0,
            blocked: None,
            steps: 0,
            finished: true,
            rng,
        };
        if let Some(b) = blocked {
            env.block_hallway(b)?;
        }
        if !env.layout.is_open(goal, env.blocked) {
            return config_err("goal lies in the blocked hallway");
        }
        env.reset();
        Ok(env)
    }

    pub fn layout(&self) -> &Arc<GridLayout> {
        &self.layout
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn blocked(&self) -> Option<HallwayId> {
        self.blocked
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn observation(&self) -> Observation {
        Observation {
            index: self.agent,
            dim: self.layout.num_states(),
        }
    }

    /// Places the agent uniformly on an open non-goal cell.
    pub fn reset(&mut self) -> StepResult {
        let open = self.layout.open_states(self.blocked);
        loop {
            let s = open[self.rng.gen_range(0..open.len())];
            if s != self.goal {
                self.agent = s;
                break;
            }
        }
        self.steps = 0;
        self.finished = false;
        StepResult {
            observation: self.observation(),
            reward: 0.0,
            done: false,
            truncated: false,
            slipped: false,
            executed: Action::Up,
        }
    }

    /// Moves the goal and starts a new episode.
    pub fn reset_with_goal(&mut self, goal: GoalSpec) -> Result<StepResult> {
        let blocked = self.blocked;
        self.goal = goal.resolve(&self.layout, blocked, &mut self.rng)?;
        Ok(self.reset())
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.finished {
            return usage_err("step called on a finished episode; call reset first");
        }
        let slipped = self.rng.gen::<f64>() < self.config.slip;
        let executed = if slipped {
            Action::ALL[self.rng.gen_range(0..Action::COUNT)]
        } else {
            action
        };
        self.agent = self.layout.transition(self.agent, executed, self.blocked);
        self.steps += 1;
        let done = self.agent == self.goal;
        let truncated = !done && self.steps >= self.config.max_steps;
        self.finished = done || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward: if done {
                self.config.goal_reward
            } else {
                self.config.step_reward
            },
            done,
            truncated,
            slipped,
            executed,
        })
    }

    /// Walls off a hallway. The goal may not lie in it.
    pub fn block_hallway(&mut self, id: HallwayId) -> Result<()> {
        let Some(h) = self.layout.hallway(id) else {
            return config_err(format!("layout has no {id} hallway"));
        };
        if h.state == self.goal {
            return config_err(format!("cannot block the {id} hallway: it holds the goal"));
        }
        if !self.layout.is_connected(Some(id)) {
            return config_err(format!("blocking the {id} hallway disconnects the layout"));
        }
        let cell = h.state;
        self.blocked = Some(id);
        if self.agent == cell {
            self.reset();
        }
        Ok(())
    }

    pub fn unblock(&mut self) {
        self.blocked = None;
    }
}
