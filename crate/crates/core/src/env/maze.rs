use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;

use super::{run_episode, Controller, DatasetBuffer, Env, EnvSpec, Step};
use crate::error::{Error, Result};
use crate::rng::{named_stream, normal, SimRng};

/// Default 6x6 layout, top row first. The wall in the middle column is four
/// cells long; `U` marks the sparsely covered block right of it and `S` the
/// spawn cells on both sides.
pub const DEFAULT_LAYOUT: &str = "\
.....G
..#UU.
..#UU.
..#...
SS#SS.
SS.SS.
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Goal,
    Uncertain,
    Spawn,
}

impl Cell {
    fn parse(c: char) -> Option<Cell> {
        Some(match c {
            '.' => Cell::Free,
            '#' => Cell::Wall,
            'G' => Cell::Goal,
            'U' => Cell::Uncertain,
            'S' => Cell::Spawn,
            _ => return None,
        })
    }
}

/// Point mass on `[0,1]^2` with state `(x, y, vx, vy)` and force action.
///
/// Uncertain cells are muddy: velocity is damped there, so a model that saw
/// little data from them cannot get away with the open-floor dynamics.
#[derive(Debug, Clone)]
pub struct PointMaze {
    spec: EnvSpec,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    spawn: Vec<usize>,
    goal_dist: Vec<Option<usize>>,
    pub dt: f64,
    pub v_max: f64,
    pub step_penalty: f64,
    pub goal_reward: f64,
    /// Fraction of velocity lost per step while inside an uncertain cell.
    pub uncertain_friction: f64,
}

impl PointMaze {
    pub fn default_maze() -> Self {
        Self::from_layout(DEFAULT_LAYOUT).expect("default layout is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_layout(&text)
    }

    pub fn from_layout(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Config("empty maze layout".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Config(format!("maze row {r} is not {width} wide")));
            }
            for ch in line.chars() {
                cells.push(
                    Cell::parse(ch)
                        .ok_or_else(|| Error::Config(format!("unknown maze character {ch:?} in row {r}")))?,
                );
            }
        }
        if !cells.contains(&Cell::Goal) {
            return Err(Error::Config("maze has no goal cell".into()));
        }
        let mut spawn: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Spawn).collect();
        if spawn.is_empty() {
            spawn = (0..cells.len()).filter(|&i| cells[i] == Cell::Free).collect();
        }
        let goal_dist = bfs_from_goal(&cells, width, height);
        if spawn.iter().any(|&i| goal_dist[i].is_none()) || spawn.is_empty() {
            return Err(Error::Config("goal unreachable from a spawn cell".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                name: "point_maze".into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                horizon: 100,
                gamma: 0.99,
                r_max: 1.0,
            },
            width,
            height,
            cells,
            spawn,
            goal_dist,
            dt: 0.1,
            v_max: 0.5,
            step_penalty: -0.001,
            goal_reward: 1.0,
            uncertain_friction: 0.5,
        })
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.spec.horizon = horizon;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(row, col)` of a position, row 0 at the top. Positions outside the
    /// square map to the nearest border cell.
    pub fn cell_at(&self, x: f64, y: f64) -> (usize, usize) {
        let col = ((x * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let from_bottom = ((y * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (self.height - 1 - from_bottom, col)
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn cell_kind(&self, x: f64, y: f64) -> Cell {
        let (r, c) = self.cell_at(x, y);
        self.cell(r, c)
    }

    /// Flat cell index of a state's position.
    pub fn cell_index(&self, state: &[f64]) -> usize {
        let (r, c) = self.cell_at(state[0], state[1]);
        r * self.width + c
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64,
            ((self.height - 1 - row) as f64 + 0.5) / self.height as f64,
        )
    }

    pub fn in_uncertain_region(&self, state: &[f64]) -> bool {
        self.cell_kind(state[0], state[1]) == Cell::Uncertain
    }

    fn blocked(&self, x: f64, y: f64) -> bool {
        !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) || self.cell_kind(x, y) == Cell::Wall
    }

    /// Shortest cell distance to the goal, if reachable.
    pub fn goal_distance(&self, row: usize, col: usize) -> Option<usize> {
        self.goal_dist[row * self.width + col]
    }
}

fn bfs_from_goal(cells: &[Cell], width: usize, height: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; cells.len()];
    let mut queue = VecDeque::new();
    for (i, c) in cells.iter().enumerate() {
        if *c == Cell::Goal {
            dist[i] = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / width, i % width);
        let d = dist[i].unwrap_or(0);
        for (nr, nc) in neighbours(r, c, width, height) {
            let j = nr * width + nc;
            if cells[j] != Cell::Wall && dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    dist
}

fn neighbours(r: usize, c: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push((r - 1, c));
    }
    if r + 1 < height {
        out.push((r + 1, c));
    }
    if c > 0 {
        out.push((r, c - 1));
    }
    if c + 1 < width {
        out.push((r, c + 1));
    }
    out.into_iter()
}

impl Env for PointMaze {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> Vec<f64> {
        let i = self.spawn[rng.random_range(0..self.spawn.len())];
        let (row, col) = (i / self.width, i % self.width);
        let (cx, cy) = self.cell_center(row, col);
        let half_w = 0.25 / self.width as f64;
        let half_h = 0.25 / self.height as f64;
        vec![
            cx + rng.random_range(-half_w..half_w),
            cy + rng.random_range(-half_h..half_h),
            0.0,
            0.0,
        ]
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut SimRng) -> Step {
        let a = self.spec.clip_action(action);
        let (x, y) = (state[0], state[1]);
        let mut vx = (state[2] + a[0] * self.dt).clamp(-self.v_max, self.v_max);
        let mut vy = (state[3] + a[1] * self.dt).clamp(-self.v_max, self.v_max);
        if self.cell_kind(x, y) == Cell::Uncertain {
            vx *= 1.0 - self.uncertain_friction;
            vy *= 1.0 - self.uncertain_friction;
        }
        let mut nx = x + vx * self.dt;
        if self.blocked(nx, y) {
            nx = x;
            vx = 0.0;
        }
        let mut ny = y + vy * self.dt;
        if self.blocked(nx, ny) {
            ny = y;
            vy = 0.0;
        }
        let next = vec![nx, ny, vx, vy];
        let done = self.is_terminal(&next);
        Step {
            state: next,
            reward: if done { self.goal_reward } else { self.step_penalty },
            done,
        }
    }

    fn is_terminal(&self, state: &[f64]) -> bool {
        self.cell_kind(state[0], state[1]) == Cell::Goal
    }

    fn position(&self, state: &[f64]) -> Option<(f64, f64)> {
        Some((state[0], state[1]))
    }
}

/// Noisy waypoint follower: heads for the centre of the neighbouring cell
/// one step closer to the goal.
#[derive(Debug, Clone)]
pub struct MazeController<'a> {
    pub maze: &'a PointMaze,
    pub noise_std: f64,
    pub gain: f64,
}

impl<'a> MazeController<'a> {
    pub fn new(maze: &'a PointMaze, noise_std: f64) -> Self {
        Self {
            maze,
            noise_std,
            gain: 4.0,
        }
    }
}

impl Controller for MazeController<'_> {
    fn act(&self, s: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let m = self.maze;
        let (r, c) = m.cell_at(s[0], s[1]);
        let here = m.goal_distance(r, c).unwrap_or(usize::MAX);
        let next = neighbours(r, c, m.width, m.height)
            .filter_map(|(nr, nc)| m.goal_distance(nr, nc).map(|d| (d, nr, nc)))
            .filter(|&(d, _, _)| d < here)
            .min();
        let (tx, ty) = match next {
            Some((_, nr, nc)) => m.cell_center(nr, nc),
            None => m.cell_center(r, c),
        };
        let desired = [
            (self.gain * (tx - s[0])).clamp(-m.v_max, m.v_max),
            (self.gain * (ty - s[1])).clamp(-m.v_max, m.v_max),
        ];
        (0..2)
            .map(|k| {
                let a = ((desired[k] - s[2 + k]) / m.dt).clamp(-1.0, 1.0);
                (a + self.noise_std * normal(rng)).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

/// Rolls out `behavior` for `n_episodes` and drops transitions that start in
/// the uncertain region with probability `decimation_rate`.
pub fn collect_offline_dataset(
    env: &PointMaze,
    behavior: &dyn Controller,
    n_episodes: usize,
    decimation_rate: f64,
    seed: u64,
) -> Result<DatasetBuffer> {
    if !(0.0..=1.0).contains(&decimation_rate) {
        return Err(Error::InvalidArgument(format!(
            "decimation rate {decimation_rate} not in [0, 1]"
        )));
    }
    if n_episodes == 0 {
        return Err(Error::Dataset("no episodes requested".into()));
    }
    let mut env_rng = named_stream(seed, "offline/env");
    let mut pol_rng = named_stream(seed, "offline/behavior");
    let mut keep_rng = named_stream(seed, "offline/decimate");
    let mut kept = Vec::new();
    for _ in 0..n_episodes {
        for t in run_episode(env, behavior, &mut env_rng, &mut pol_rng) {
            if !env.in_uncertain_region(&t.s) || keep_rng.random::<f64>() >= decimation_rate {
                kept.push(t);
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Dataset("decimation removed every transition".into()));
    }
    DatasetBuffer::from_transitions(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_action_at_rest() {
        let m = PointMaze::default_maze();
        let s = [0.2, 0.2, 0.0, 0.0];
        let st = m.step(&s, &[0.0, 0.0], &mut rng_from(0));
        assert_eq!(st.state, s.to_vec());
        assert_eq!(st.reward, -0.001);
        assert!(!st.done);
    }

    #[test]
    fn unit_push_right() {
        let m = PointMaze::default_maze();
        let st = m.step(&[0.2, 0.2, 0.0, 0.0], &[1.0, 0.0], &mut rng_from(0));
        assert!((st.state[2] - 0.1).abs() < 1e-15);
        assert!((st.state[0] - 0.21).abs() < 1e-15);
        assert_eq!(st.state[1], 0.2);
    }

    #[test]
    fn wall_stops_motion_and_zeroes_velocity() {
        let m = PointMaze::default_maze();
        // just left of the wall column (x in [1/3, 1/2)) in row 3
        let s = [0.33, 0.45, 0.5, 0.0];
        let st = m.step(&s, &[1.0, 0.0], &mut rng_from(0));
        assert_eq!(st.state[0], 0.33);
        assert_eq!(st.state[2], 0.0);
    }

    #[test]
    fn mud_damps_velocity() {
        let m = PointMaze::default_maze();
        // row 1, col 3 is uncertain
        let st = m.step(&[0.6, 0.75, 0.2, 0.0], &[0.0, 0.0], &mut rng_from(0));
        assert!((st.state[2] - 0.1).abs() < 1e-15);
        assert!((st.state[0] - 0.61).abs() < 1e-15);
    }

    #[test]
    fn goal_is_terminal_with_bonus() {
        let m = PointMaze::default_maze();
        let st = m.step(&[0.9, 0.83, 0.0, 0.5], &[0.0, 1.0], &mut rng_from(0));
        assert!(st.done);
        assert_eq!(st.reward, 1.0);
    }

    #[test]
    fn layout_parsing_errors() {
        assert!(PointMaze::from_layout("..\n..\n").is_err());
        assert!(PointMaze::from_layout("..G\n.x.\n").is_err());
        assert!(PointMaze::from_layout("..G\n..\n").is_err());
        assert!(PointMaze::from_layout("S#G\n").is_err());
        let m = PointMaze::from_layout("S.G\n").unwrap();
        assert_eq!((m.width(), m.height()), (3, 1));
    }

    #[test]
    fn default_maze_geometry() {
        let m = PointMaze::default_maze();
        assert_eq!(m.cell(0, 5), Cell::Goal);
        let walls = (0..6).filter(|&r| m.cell(r, 2) == Cell::Wall).count();
        assert_eq!(walls, 4);
        let u = (0..36).filter(|&i| m.cells[i] == Cell::Uncertain).count();
        assert_eq!(u, 4);
        let mut rng = rng_from(3);
        for _ in 0..200 {
            let s = m.reset(&mut rng);
            assert_eq!(m.cell_kind(s[0], s[1]), Cell::Spawn);
        }
    }
}
