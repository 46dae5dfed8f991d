//! Procedurally generated multi-room worlds with an embodied agent,
//! raycast-rendered egocentric RGB observations, and exploration coverage
//! tracking.

mod env;
mod gen;
mod render;

pub use env::{Env, EpisodeStats, EpisodeTask, SimConfig, StepInfo, VecEnv, WorldResetMode};
pub use gen::{generate_world, ConfigError, Palette, Room, TextureKind, WorldGenConfig};
pub use render::{render, Observation};

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;

/// One grid cell: either wall, or floor belonging to exactly one room.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub wall: bool,
    pub room_id: Option<u16>,
}

/// A fully expanded world. Only `(seed, config)` is ever persisted;
/// everything else is regenerated on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub config: WorldGenConfig,
    pub grid_width: usize,
    pub grid_height: usize,
    pub rooms: Vec<Room>,
    pub cells: Vec<Cell>,
}

impl WorldSpec {
    pub fn cell(&self, x: i32, y: i32) -> Cell {
        if x < 0 || y < 0 || x as usize >= self.grid_width || y as usize >= self.grid_height {
            return Cell { wall: true, room_id: None };
        }
        self.cells[y as usize * self.grid_width + x as usize]
    }

    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        self.cell(x, y).wall
    }

    pub fn room_at(&self, x: i32, y: i32) -> Option<&Room> {
        self.cell(x, y).room_id.map(|id| &self.rooms[id as usize])
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for y in 0..self.grid_height {
            for x in 0..self.grid_width {
                if !self.cells[y * self.grid_width + x].wall {
                    out.push((x as i32, y as i32));
                }
            }
        }
        out
    }

    pub fn num_style_classes(&self) -> usize {
        self.config.num_style_classes
    }
}

/// Facing direction; the four-element rotation group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    /// Unit step in grid coordinates (y grows downward).
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    pub fn all() -> [Heading; 4] {
        [Heading::North, Heading::East, Heading::South, Heading::West]
    }

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Forward,
            1 => Action::TurnLeft,
            2 => Action::TurnRight,
            _ => panic!("action index {i} out of range"),
        }
    }
}

/// Continuous position in cell units plus discrete heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f32,
    pub y: f32,
    pub heading: Heading,
    pub steps_taken: u32,
}

impl AgentState {
    pub fn cell(&self) -> (i32, i32) {
        (self.x.floor() as i32, self.y.floor() as i32)
    }
}

/// Coverage bookkeeping: which cells were occupied and how often.
#[derive(Debug, Clone, Default)]
pub struct VisitMap {
    visited: HashSet<(i32, i32)>,
    counts: HashMap<(i32, i32), u32>,
}

impl VisitMap {
    pub fn new() -> VisitMap {
        VisitMap::default()
    }

    /// Record occupancy; returns the post-increment count for the cell.
    pub fn record(&mut self, cell: (i32, i32)) -> u32 {
        self.visited.insert(cell);
        let c = self.counts.entry(cell).or_insert(0);
        *c += 1;
        *c
    }

    pub fn count(&self, cell: (i32, i32)) -> u32 {
        self.counts.get(&cell).copied().unwrap_or(0)
    }

    pub fn contains(&self, cell: (i32, i32)) -> bool {
        self.visited.contains(&cell)
    }

    pub fn tiles_explored(&self) -> usize {
        self.visited.len()
    }
}

/// Place the agent at the center of a uniformly sampled free cell with a
/// uniform heading.
pub fn reset(world: &WorldSpec, rng: &mut impl Rng) -> AgentState {
    let free = world.free_cells();
    assert!(!free.is_empty(), "world has no free cells");
    let (cx, cy) = free[rng.gen_range(0..free.len())];
    let heading = Heading::all()[rng.gen_range(0..4)];
    AgentState { x: cx as f32 + 0.5, y: cy as f32 + 0.5, heading, steps_taken: 0 }
}

/// Advance one step. Forward moves one cell along the heading unless the
/// destination is a wall (then position is unchanged); turns rotate the
/// heading. `done` is purely the step-count boundary.
pub fn step(world: &WorldSpec, state: &AgentState, action: Action, episode_length: u32) -> (AgentState, bool) {
    let mut next = *state;
    match action {
        Action::Forward => {
            let (dx, dy) = state.heading.delta();
            let tx = state.x + dx as f32;
            let ty = state.y + dy as f32;
            if !world.is_wall(tx.floor() as i32, ty.floor() as i32) {
                next.x = tx;
                next.y = ty;
            }
        }
        Action::TurnLeft => next.heading = state.heading.left(),
        Action::TurnRight => next.heading = state.heading.right(),
    }
    next.steps_taken = state.steps_taken + 1;
    let done = next.steps_taken >= episode_length;
    (next, done)
}

/// 4-neighbor BFS distance in cells; `None` when unreachable or either
/// endpoint is a wall.
pub fn shortest_path_len(world: &WorldSpec, from: (i32, i32), to: (i32, i32)) -> Option<u32> {
    if world.is_wall(from.0, from.1) || world.is_wall(to.0, to.1) {
        return None;
    }
    if from == to {
        return Some(0);
    }
    let field = distance_field(world, &[to]);
    let d = field[from.1 as usize * world.grid_width + from.0 as usize];
    (d != u32::MAX).then_some(d)
}

/// Multi-source BFS; unreachable or wall cells hold `u32::MAX`.
pub fn distance_field(world: &WorldSpec, goals: &[(i32, i32)]) -> Vec<u32> {
    let (w, h) = (world.grid_width, world.grid_height);
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = VecDeque::new();
    for &(x, y) in goals {
        if !world.is_wall(x, y) {
            let idx = y as usize * w + x as usize;
            if dist[idx] != 0 {
                dist[idx] = 0;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y as usize * w + x as usize];
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if !world.is_wall(nx, ny) {
                let idx = ny as usize * w + nx as usize;
                if dist[idx] == u32::MAX {
                    dist[idx] = d + 1;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    dist
}

/// Number of distinct cells occupied so far.
pub fn tiles_explored(visit_map: &VisitMap) -> usize {
    visit_map.tiles_explored()
}

/// Style class of the room containing the agent's cell.
pub fn style_class_at(world: &WorldSpec, state: &AgentState) -> usize {
    let (x, y) = state.cell();
    world
        .room_at(x, y)
        .unwrap_or_else(|| panic!("agent cell ({x}, {y}) is not inside a room"))
        .style_class
}
