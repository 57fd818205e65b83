//! Non-learned movement strategies: standing still, random actions, and a
//! grid planner that drives the shortest route to the pursued pedestrian.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Rect, Segment, Vec2};
use crate::policy::env::{ControlInput, Controller, Environment};
use crate::policy::{ActionSpace, PolicyError};
use crate::world::{Pose2D, RobotState, Velocity, W_MAX};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("robot cell ({0}, {1}) is occupied")]
    StartOccupied(usize, usize),
    #[error("point ({0:.3}, {1:.3}) lies outside the grid")]
    OutOfBounds(f64, f64),
}

/// Boolean occupancy on a regular grid. Cell `(i, j)` covers
/// `[origin.x + i·res, origin.x + (i+1)·res) × [origin.y + j·res, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: Pose2D,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(origin: Vec2, width: usize, height: usize, resolution: f64) -> Self {
        Self {
            resolution,
            origin: Pose2D::new(origin.x, origin.y, 0.0),
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    /// Marks every cell whose centre lies closer than `inflation` to a wall.
    pub fn from_walls(bounds: Rect, walls: &[Segment], resolution: f64, inflation: f64) -> Self {
        let width = (bounds.width() / resolution).ceil().max(1.0) as usize;
        let height = (bounds.height() / resolution).ceil().max(1.0) as usize;
        let mut grid = Self::empty(
            Vec2::new(bounds.min_x, bounds.min_y),
            width,
            height,
            resolution,
        );
        for j in 0..height {
            for i in 0..width {
                let c = grid.center(i, j);
                grid.cells[j * width + i] =
                    walls.iter().any(|w| w.distance_to_point(c) < inflation);
            }
        }
        grid
    }

    /// Grid covering the bounding box of the walls.
    pub fn around_walls(walls: &[Segment], resolution: f64, inflation: f64) -> Self {
        let (mut lo, mut hi) = (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for w in walls {
            for p in [w.a, w.b] {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        if walls.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::new(resolution, resolution);
        }
        Self::from_walls(
            Rect::new(lo.x, lo.y, hi.x, hi.y),
            walls,
            resolution,
            inflation,
        )
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        (fx >= 0.0 && fy >= 0.0 && (fx as usize) < self.width && (fy as usize) < self.height)
            .then_some((fx as usize, fy as usize))
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        self.cells[j * self.width + i] = occupied;
    }

    /// Marks every cell whose centre lies closer than `radius` to `c`.
    pub fn mark_disc(&mut self, c: Vec2, radius: f64) {
        let span = (radius / self.resolution).ceil() as isize + 1;
        let Some((ci, cj)) = self.cell_of(c) else {
            return;
        };
        for dj in -span..=span {
            for di in -span..=span {
                let (i, j) = (ci as isize + di, cj as isize + dj);
                if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
                    continue;
                }
                if self.center(i as usize, j as usize).distance(c) < radius {
                    self.set(i as usize, j as usize, true);
                }
            }
        }
    }

    /// Free 8-connected neighbours with step costs in cells. Diagonal moves
    /// need both adjacent orthogonal cells free.
    fn neighbours(&self, i: usize, j: usize) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        const STEPS: [(isize, isize); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        STEPS.iter().filter_map(move |&(di, dj)| {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni as usize >= self.width || nj as usize >= self.height {
                return None;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            if self.occupied(ni, nj) {
                return None;
            }
            if di != 0 && dj != 0 && (self.occupied(ni, j) || self.occupied(i, nj)) {
                return None;
            }
            Some((
                (ni, nj),
                if di != 0 && dj != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                },
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
    /// Length in cell units.
    pub cost: f64,
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    order: u64,
    cell: (usize, usize),
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn cell_dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let (dx, dy) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
    (dx * dx + dy * dy).sqrt()
}

/// Best-first search to any free cell within `radius` cells of `goal`.
/// `heuristic` switches between A* and Dijkstra.
fn search(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    radius: f64,
    heuristic: bool,
) -> Result<Option<GridPath>, PlanError> {
    if grid.occupied(start.0, start.1) {
        return Err(PlanError::StartOccupied(start.0, start.1));
    }
    let h = |c: (usize, usize)| {
        if heuristic {
            (cell_dist(c, goal) - radius).max(0.0)
        } else {
            0.0
        }
    };
    let n = grid.width * grid.height;
    let idx = |c: (usize, usize)| c.1 * grid.width + c.0;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut order = 0;
    g[idx(start)] = 0.0;
    heap.push(Entry {
        f: h(start),
        order,
        cell: start,
    });
    while let Some(Entry { cell, .. }) = heap.pop() {
        let ci = idx(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell_dist(cell, goal) <= radius + 1e-12 {
            let mut cells = vec![cell];
            let mut k = ci;
            while parent[k] != usize::MAX {
                k = parent[k];
                cells.push((k % grid.width, k / grid.width));
            }
            cells.reverse();
            return Ok(Some(GridPath { cells, cost: g[ci] }));
        }
        for (nb, step) in grid.neighbours(cell.0, cell.1) {
            let ni = idx(nb);
            let cand = g[ci] + step;
            if !closed[ni] && cand < g[ni] {
                g[ni] = cand;
                parent[ni] = ci;
                order += 1;
                heap.push(Entry {
                    f: cand + h(nb),
                    order,
                    cell: nb,
                });
            }
        }
    }
    Ok(None)
}

/// A* with the Euclidean heuristic.
pub fn astar(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    radius: f64,
) -> Result<Option<GridPath>, PlanError> {
    search(grid, start, goal, radius, true)
}

/// Uniform-cost search; same contract as [`astar`].
pub fn dijkstra(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    radius: f64,
) -> Result<Option<GridPath>, PlanError> {
    search(grid, start, goal, radius, false)
}

pub fn write_path_csv<W: Write>(path: &[Vec2], out: &mut W) -> io::Result<()> {
    writeln!(out, "x,y")?;
    for p in path {
        writeln!(out, "{},{}", p.x, p.y)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub resolution: f64,
    /// Extra clearance added to the robot radius when inflating walls.
    pub margin: f64,
    /// The robot stops once it is this close to the target.
    pub standoff: f64,
    pub lookahead: f64,
    /// Body radius assumed for tracked pedestrians.
    pub human_radius: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            margin: 0.0,
            standoff: 1.0,
            lookahead: 0.5,
            human_radius: 0.3,
        }
    }
}

pub fn passive_policy() -> Velocity {
    Velocity::ZERO
}

/// One uniformly drawn action; also returns its index.
pub fn random_policy<R: Rng + ?Sized>(actions: &ActionSpace, rng: &mut R) -> (Velocity, usize) {
    let i = rng.random_range(0..actions.len());
    (actions.velocity(i), i)
}

/// Pure-pursuit steering toward a point ahead on the path.
pub fn pure_pursuit(pose: &Pose2D, point: Vec2, lookahead: f64) -> Velocity {
    let (_, alpha) = pose.polar_to(point);
    if alpha.abs() > std::f64::consts::FRAC_PI_2 {
        return Velocity::new(0.0, W_MAX.copysign(alpha));
    }
    let v = alpha.cos();
    let w = 2.0 * v * alpha.sin() / lookahead;
    Velocity::new(v, w).clamped()
}

/// Plans on `grid` from the robot to within `cfg.standoff` of `target` and
/// returns the steering command together with the world-frame path.
pub fn shortest_path_policy(
    grid: &OccupancyGrid,
    robot: &RobotState,
    target: &Pose2D,
    cfg: &PlannerConfig,
) -> Result<(Velocity, Vec<Vec2>), PlanError> {
    let pose = robot.pose;
    let start = grid
        .cell_of(pose.position())
        .ok_or(PlanError::OutOfBounds(pose.x, pose.y))?;
    let goal = grid
        .cell_of(target.position())
        .ok_or(PlanError::OutOfBounds(target.x, target.y))?;
    let (dist, bearing) = pose.polar_to(target.position());
    if dist <= cfg.standoff {
        return Ok((
            Velocity::new(0.0, (2.0 * bearing).clamp(-W_MAX, W_MAX)),
            vec![],
        ));
    }
    let Some(path) = astar(grid, start, goal, cfg.standoff / grid.resolution)? else {
        return Ok((Velocity::new(0.0, W_MAX), vec![]));
    };
    let points: Vec<Vec2> = path.cells.iter().map(|&(i, j)| grid.center(i, j)).collect();
    let here = pose.position();
    let aim = points
        .iter()
        .copied()
        .find(|p| p.distance(here) >= cfg.lookahead)
        .or(points.last().copied())
        .unwrap_or(target.position());
    Ok((pure_pursuit(&pose, aim, cfg.lookahead), points))
}

pub struct PassiveController;

impl Controller for PassiveController {
    fn name(&self) -> String {
        "passive".into()
    }

    fn command<R: Rng + ?Sized>(
        &mut self,
        _: &ControlInput,
        _: &mut R,
    ) -> Result<(Velocity, Option<usize>), PolicyError> {
        Ok((passive_policy(), None))
    }
}

pub struct RandomController;

impl Controller for RandomController {
    fn name(&self) -> String {
        "random".into()
    }

    fn command<R: Rng + ?Sized>(
        &mut self,
        input: &ControlInput,
        rng: &mut R,
    ) -> Result<(Velocity, Option<usize>), PolicyError> {
        let (v, i) = random_policy(input.env.action_space(), rng);
        Ok((v, Some(i)))
    }
}

/// Replans every tick on a grid built from the static walls.
pub struct ShortestPathController {
    pub config: PlannerConfig,
    grid: Option<OccupancyGrid>,
}

impl ShortestPathController {
    pub fn new(config: PlannerConfig) -> Self {
        Self { config, grid: None }
    }
}

impl Controller for ShortestPathController {
    fn name(&self) -> String {
        "shortest".into()
    }

    fn command<R: Rng + ?Sized>(
        &mut self,
        input: &ControlInput,
        _: &mut R,
    ) -> Result<(Velocity, Option<usize>), PolicyError> {
        let world = &input.env.world;
        let cfg = self.config;
        let base = self.grid.get_or_insert_with(|| {
            OccupancyGrid::around_walls(
                &world.walls,
                cfg.resolution,
                world.robot.radius + cfg.margin,
            )
        });
        // Tracked pedestrians are treated as static discs for this tick.
        let mut grid = base.clone();
        for t in input.env.tracker().tracks() {
            let c = t.est_pose.position();
            let reach = world.robot.radius + cfg.human_radius + cfg.margin;
            grid.mark_disc(c, reach);
        }
        let grid = &grid;
        let Some(target) = input.env.target_position() else {
            return Ok((Velocity::ZERO, None));
        };
        let target = Pose2D::new(target.x, target.y, 0.0);
        let mut robot = world.robot;
        match shortest_path_policy(grid, &robot, &target, &cfg) {
            Ok((v, _)) => Ok((v, None)),
            Err(PlanError::StartOccupied(..)) => {
                // Hugging a wall: plan from the nearest free cell instead.
                let here = robot.pose.position();
                let free = (0..grid.height)
                    .flat_map(|j| (0..grid.width).map(move |i| (i, j)))
                    .filter(|&(i, j)| {
                        !grid.occupied(i, j) && grid.center(i, j).distance(here) <= robot.radius
                    })
                    .min_by(|a, b| {
                        grid.center(a.0, a.1)
                            .distance(here)
                            .total_cmp(&grid.center(b.0, b.1).distance(here))
                    });
                match free {
                    Some((i, j)) => {
                        let c = grid.center(i, j);
                        robot.pose = Pose2D::new(c.x, c.y, robot.pose.theta);
                        let v = shortest_path_policy(grid, &robot, &target, &cfg)
                            .map(|r| r.0)
                            .unwrap_or(Velocity::new(0.0, W_MAX));
                        Ok((v, None))
                    }
                    None => Ok((Velocity::new(0.0, W_MAX), None)),
                }
            }
            Err(PlanError::OutOfBounds(..)) => Ok((Velocity::new(0.0, W_MAX), None)),
        }
    }
}

/// Heading error helper shared by tests and examples.
pub fn heading_error(pose: &Pose2D, p: Vec2) -> f64 {
    normalize_angle((p - pose.position()).angle() - pose.theta)
}
