//! Deterministic planar world: a unicycle robot, waypoint-following
//! pedestrians, static wall chains, collision tests and scenario generation.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Rect, Segment, Vec2};

pub const V_MIN: f64 = 0.0;
pub const V_MAX: f64 = 1.0;
pub const W_MAX: f64 = 1.0;

/// Pedestrians switch to their next waypoint inside this radius.
pub const WAYPOINT_CAPTURE_RADIUS: f64 = 0.3;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("scenario generation failed: {0}")]
    Generation(String),
    #[error("scenario file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// A world-frame point expressed in this pose's frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.theta)
    }

    /// Range and bearing (relative to heading) of a world-frame point.
    pub fn polar_to(&self, p: Vec2) -> (f64, f64) {
        let local = self.to_local(p);
        (local.norm(), local.angle())
    }
}

/// Translational and rotational velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub v: f64,
    pub w: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    /// Projects onto the admissible box `v ∈ [0, 1]`, `w ∈ [−1, 1]`.
    pub fn clamped(self) -> Self {
        Self {
            v: self.v.clamp(V_MIN, V_MAX),
            w: self.w.clamp(-W_MAX, W_MAX),
        }
    }

    pub fn in_bounds(&self) -> bool {
        (V_MIN..=V_MAX).contains(&self.v) && (-W_MAX..=W_MAX).contains(&self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub velocity: Velocity,
    pub radius: f64,
}

impl RobotState {
    pub fn new(pose: Pose2D, radius: f64) -> Self {
        Self {
            pose,
            velocity: Velocity::ZERO,
            radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAgent {
    pub id: u32,
    pub pose: Pose2D,
    pub body_radius: f64,
    pub speed: f64,
    pub waypoints: Vec<Pose2D>,
    /// Index into the scenario's class set.
    pub true_class: usize,
    #[serde(default)]
    pub next_waypoint: usize,
}

impl HumanAgent {
    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }
}

/// An open chain of wall segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
}

impl Polyline {
    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.points.windows(2).map(|w| Segment::new(w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bounds: Rect,
    pub obstacles: Vec<Polyline>,
    pub humans: Vec<HumanAgent>,
    pub robot_start: Pose2D,
    pub robot_radius: f64,
    pub class_names: Vec<String>,
    pub rng_seed: u64,
    /// Episode length in ticks.
    pub duration: u64,
    pub dt: f64,
}

impl Scenario {
    /// All wall segments, room boundary included.
    pub fn walls(&self) -> Vec<Segment> {
        let mut walls: Vec<Segment> = self.bounds.edges().to_vec();
        walls.extend(self.obstacles.iter().flat_map(|o| o.segments()));
        walls
    }

    /// Checks the start-state invariants.
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.dt > 0.0) {
            return Err(WorldError::InvalidState(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.robot_radius > 0.0) {
            return Err(WorldError::InvalidState(
                "robot radius must be positive".into(),
            ));
        }
        if !self.bounds.contains(self.robot_start.position()) {
            return Err(WorldError::InvalidState(
                "robot start outside bounds".into(),
            ));
        }
        let walls = self.walls();
        let robot = RobotState::new(self.robot_start, self.robot_radius);
        if check_collision(&robot, &self.humans, &walls) {
            return Err(WorldError::InvalidState("robot start in collision".into()));
        }
        for (i, h) in self.humans.iter().enumerate() {
            if !(h.body_radius > 0.0) || !(h.speed >= 0.0) {
                return Err(WorldError::InvalidState(format!(
                    "human {} has invalid radius/speed",
                    h.id
                )));
            }
            if h.true_class >= self.class_names.len() {
                return Err(WorldError::InvalidState(format!(
                    "human {} class out of range",
                    h.id
                )));
            }
            if !self.bounds.contains(h.position()) {
                return Err(WorldError::InvalidState(format!(
                    "human {} outside bounds",
                    h.id
                )));
            }
            for other in &self.humans[i + 1..] {
                if h.position().distance(other.position()) < h.body_radius + other.body_radius {
                    return Err(WorldError::InvalidState(format!(
                        "humans {} and {} overlap",
                        h.id, other.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A versioned collection of scenarios, the on-disk unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSuite {
    pub schema_version: u32,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSuite {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            scenarios,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| WorldError::Format(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCENARIO_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(WorldError::Format(format!(
                    "unsupported schema_version {v}, expected {SCENARIO_SCHEMA_VERSION}"
                )))
            }
            None => return Err(WorldError::Format("missing schema_version".into())),
        }
        let suite: ScenarioSuite =
            serde_json::from_value(value).map_err(|e| WorldError::Format(e.to_string()))?;
        for s in &suite.scenarios {
            s.validate()?;
        }
        Ok(suite)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario suite serializes")
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Integrates unicycle kinematics for one tick after clamping the command.
pub fn step_robot(state: &RobotState, action: Velocity, dt: f64) -> Result<RobotState, WorldError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(WorldError::InvalidState(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    if !state.pose.is_finite() || !action.v.is_finite() || !action.w.is_finite() {
        return Err(WorldError::InvalidState("non-finite pose or action".into()));
    }
    let cmd = action.clamped();
    let p = &state.pose;
    let pose = Pose2D {
        x: p.x + cmd.v * p.theta.cos() * dt,
        y: p.y + cmd.v * p.theta.sin() * dt,
        theta: normalize_angle(p.theta + cmd.w * dt),
    };
    Ok(RobotState {
        pose,
        velocity: cmd,
        radius: state.radius,
    })
}

/// Advances every pedestrian toward its current waypoint, then resolves
/// pairwise overlaps and wall penetrations by projection.
pub fn step_humans(humans: &[HumanAgent], walls: &[Segment], dt: f64) -> Vec<HumanAgent> {
    let mut next: Vec<HumanAgent> = humans.iter().map(|h| advance_human(h, dt)).collect();

    for _ in 0..8 {
        let mut moved = false;
        for i in 0..next.len() {
            for j in i + 1..next.len() {
                let (pi, pj) = (next[i].position(), next[j].position());
                let min_dist = next[i].body_radius + next[j].body_radius;
                let delta = pj - pi;
                let dist = delta.norm();
                if dist < min_dist {
                    let dir = if dist > 1e-12 {
                        delta * (1.0 / dist)
                    } else {
                        Vec2::new(1.0, 0.0)
                    };
                    let push = (min_dist - dist) * 0.5 + 1e-9;
                    next[i].pose.x -= dir.x * push;
                    next[i].pose.y -= dir.y * push;
                    next[j].pose.x += dir.x * push;
                    next[j].pose.y += dir.y * push;
                    moved = true;
                }
            }
        }
        for h in next.iter_mut() {
            for wall in walls {
                let c = wall.closest_point(h.position());
                let delta = h.position() - c;
                let dist = delta.norm();
                if dist < h.body_radius && dist > 1e-12 {
                    let push = delta * ((h.body_radius - dist + 1e-9) / dist);
                    h.pose.x += push.x;
                    h.pose.y += push.y;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    next
}

fn advance_human(h: &HumanAgent, dt: f64) -> HumanAgent {
    let mut h = h.clone();
    if h.waypoints.is_empty() || h.speed == 0.0 {
        return h;
    }
    let mut idx = h.next_waypoint % h.waypoints.len();
    let pos = h.position();
    if h.waypoints.len() > 1 && pos.distance(h.waypoints[idx].position()) <= WAYPOINT_CAPTURE_RADIUS
    {
        idx = (idx + 1) % h.waypoints.len();
    }
    h.next_waypoint = idx;
    let delta = h.waypoints[idx].position() - pos;
    let dist = delta.norm();
    if dist > 0.0 {
        let step = (h.speed * dt).min(dist);
        let dir = delta * (1.0 / dist);
        h.pose = Pose2D::new(pos.x + dir.x * step, pos.y + dir.y * step, dir.angle());
    }
    h
}

/// True iff the robot disc intersects a wall segment or a human disc.
pub fn check_collision(robot: &RobotState, humans: &[HumanAgent], walls: &[Segment]) -> bool {
    let p = robot.pose.position();
    walls.iter().any(|w| w.distance_to_point(p) < robot.radius)
        || humans
            .iter()
            .any(|h| h.position().distance(p) < h.body_radius + robot.radius)
}

/// Capsule test along the straight path between two robot positions.
pub fn swept_collision(from: Vec2, to: Vec2, radius: f64, walls: &[Segment]) -> bool {
    let path = Segment::new(from, to);
    walls.iter().any(|w| path.distance_to_segment(w) < radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub dt: f64,
    pub robot: RobotState,
    pub humans: Vec<HumanAgent>,
    pub walls: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub collided: bool,
}

impl WorldState {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            tick: 0,
            dt: scenario.dt,
            robot: RobotState::new(scenario.robot_start, scenario.robot_radius),
            humans: scenario.humans.clone(),
            walls: scenario.walls(),
        }
    }

    pub fn human(&self, id: u32) -> Option<&HumanAgent> {
        self.humans.iter().find(|h| h.id == id)
    }

    pub fn in_collision(&self) -> bool {
        check_collision(&self.robot, &self.humans, &self.walls)
    }

    /// One simulation tick: robot, then pedestrians, then collision test.
    pub fn step(&mut self, action: Velocity) -> Result<StepOutcome, WorldError> {
        let before = self.robot.pose.position();
        self.robot = step_robot(&self.robot, action, self.dt)?;
        self.humans = step_humans(&self.humans, &self.walls, self.dt);
        self.tick += 1;
        let after = self.robot.pose.position();
        let collided =
            self.in_collision() || swept_collision(before, after, self.robot.radius, &self.walls);
        Ok(StepOutcome { collided })
    }
}

/// Scenario layouts the generator knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Everything placed uniformly at random.
    Scattered,
    /// A slow target ahead of the robot, partly hidden behind a wall stub or
    /// a standing pedestrian, with extra clutter around.
    Occlusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub width: f64,
    pub height: f64,
    pub obstacle_count: usize,
    pub human_count: usize,
    pub class_names: Vec<String>,
    pub layout: Layout,
    pub human_radius: f64,
    pub robot_radius: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub waypoints_per_human: usize,
    pub duration: u64,
    pub dt: f64,
    pub max_retries: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            width: 10.0,
            height: 8.0,
            obstacle_count: 3,
            human_count: 4,
            class_names: vec!["A".into(), "B".into()],
            layout: Layout::Scattered,
            human_radius: 0.3,
            robot_radius: 0.3,
            min_speed: 0.2,
            max_speed: 0.6,
            waypoints_per_human: 3,
            duration: 48,
            dt: 0.1,
            max_retries: 500,
        }
    }
}

impl GeneratorParams {
    pub fn occlusion() -> Self {
        Self {
            layout: Layout::Occlusion,
            obstacle_count: 3,
            human_count: 4,
            ..Self::default()
        }
    }
}

/// Builds a scenario deterministically from `(params, seed)`.
pub fn generate_scenario(params: &GeneratorParams, seed: u64) -> Result<Scenario, WorldError> {
    if params.class_names.is_empty() {
        return Err(WorldError::Generation("class set is empty".into()));
    }
    if !(params.dt > 0.0) {
        return Err(WorldError::Generation("dt must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = Generator {
        params,
        rng: &mut rng,
        bounds: Rect::new(0.0, 0.0, params.width, params.height),
        obstacles: Vec::new(),
        humans: Vec::new(),
        corridor: None,
    };
    let robot_start = match params.layout {
        Layout::Scattered => gen.scattered()?,
        Layout::Occlusion => gen.occlusion()?,
    };
    let scenario = Scenario {
        bounds: gen.bounds,
        obstacles: gen.obstacles,
        humans: gen.humans,
        robot_start,
        robot_radius: params.robot_radius,
        class_names: params.class_names.clone(),
        rng_seed: seed,
        duration: params.duration,
        dt: params.dt,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Generates `count` scenarios from consecutive seeds.
pub fn generate_suite(
    params: &GeneratorParams,
    first_seed: u64,
    count: usize,
) -> Result<ScenarioSuite, WorldError> {
    let scenarios = (0..count as u64)
        .map(|i| generate_scenario(params, first_seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioSuite::new(scenarios))
}

struct Generator<'a, R: Rng> {
    params: &'a GeneratorParams,
    rng: &'a mut R,
    bounds: Rect,
    obstacles: Vec<Polyline>,
    humans: Vec<HumanAgent>,
    /// Robot-to-target sight line that wandering pedestrians keep off.
    corridor: Option<Segment>,
}

impl<R: Rng> Generator<'_, R> {
    fn walls(&self) -> Vec<Segment> {
        let mut walls = self.bounds.edges().to_vec();
        walls.extend(self.obstacles.iter().flat_map(|o| o.segments()));
        walls
    }

    fn uniform_point(&mut self, margin: f64) -> Vec2 {
        Vec2::new(
            self.rng
                .random_range(self.bounds.min_x + margin..self.bounds.max_x - margin),
            self.rng
                .random_range(self.bounds.min_y + margin..self.bounds.max_y - margin),
        )
    }

    fn clear_of_walls(&self, p: Vec2, clearance: f64) -> bool {
        self.walls()
            .iter()
            .all(|w| w.distance_to_point(p) >= clearance)
    }

    fn clear_of_humans(&self, p: Vec2, clearance: f64) -> bool {
        self.humans
            .iter()
            .all(|h| h.position().distance(p) >= clearance + h.body_radius)
    }

    fn path_clear(&self, a: Vec2, b: Vec2, clearance: f64) -> bool {
        let path = Segment::new(a, b);
        self.walls()
            .iter()
            .all(|w| path.distance_to_segment(w) >= clearance)
    }

    fn off_corridor(&self, a: Vec2, b: Vec2, clearance: f64) -> bool {
        self.corridor
            .is_none_or(|c| c.distance_to_segment(&Segment::new(a, b)) >= clearance)
    }

    fn random_obstacle(&mut self, keep_clear: &[(Vec2, f64)]) -> Result<(), WorldError> {
        for _ in 0..self.params.max_retries {
            let start = self.uniform_point(0.8);
            let heading = self.rng.random_range(-PI..PI);
            let len = self.rng.random_range(1.0..2.5);
            let mut points = vec![start, start + Vec2::from_angle(heading) * len];
            if self.rng.random_bool(0.5) {
                let turn = if self.rng.random_bool(0.5) {
                    PI / 2.0
                } else {
                    -PI / 2.0
                };
                let len2 = self.rng.random_range(0.6..1.5);
                points.push(points[1] + Vec2::from_angle(heading + turn) * len2);
            }
            let chain = Polyline { points };
            let inside = chain.points.iter().all(|p| {
                p.x > self.bounds.min_x + 0.5
                    && p.x < self.bounds.max_x - 0.5
                    && p.y > self.bounds.min_y + 0.5
                    && p.y < self.bounds.max_y - 0.5
            });
            let clear = keep_clear
                .iter()
                .all(|&(c, r)| chain.segments().all(|s| s.distance_to_point(c) >= r));
            let clear_humans = self.humans.iter().all(|h| {
                chain
                    .segments()
                    .all(|s| s.distance_to_point(h.position()) >= h.body_radius + 0.3)
            });
            if inside && clear && clear_humans {
                self.obstacles.push(chain);
                return Ok(());
            }
        }
        Err(WorldError::Generation("could not place obstacle".into()))
    }

    fn random_class(&mut self) -> usize {
        self.rng.random_range(0..self.params.class_names.len())
    }

    /// A wandering pedestrian whose waypoint legs avoid walls and the robot's
    /// start disc.
    fn random_human(&mut self, robot: Vec2) -> Result<(), WorldError> {
        let r = self.params.human_radius;
        let keep_off_robot = r + self.params.robot_radius + 0.5;
        for _ in 0..self.params.max_retries {
            let start = self.uniform_point(r + 0.2);
            if !self.clear_of_walls(start, r + 0.1)
                || !self.clear_of_humans(start, r + 0.1)
                || start.distance(robot) < keep_off_robot
                || !self.off_corridor(start, start, keep_off_robot)
            {
                continue;
            }
            let n = self.params.waypoints_per_human.max(2);
            let mut waypoints = Vec::with_capacity(n);
            let mut prev = start;
            let mut ok = true;
            for _ in 0..n {
                let mut placed = false;
                for _ in 0..50 {
                    let w = self.uniform_point(r + 0.2);
                    if self.clear_of_walls(w, r + 0.1)
                        && self.path_clear(prev, w, r + 0.05)
                        && Segment::new(prev, w).distance_to_point(robot) >= keep_off_robot
                        && self.off_corridor(prev, w, keep_off_robot)
                    {
                        waypoints.push(Pose2D::new(w.x, w.y, 0.0));
                        prev = w;
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    ok = false;
                    break;
                }
            }
            // closing leg of the patrol loop
            if !ok
                || !self.path_clear(prev, start, r + 0.05)
                || Segment::new(prev, start).distance_to_point(robot) < keep_off_robot
                || !self.off_corridor(prev, start, keep_off_robot)
            {
                continue;
            }
            let speed = self
                .rng
                .random_range(self.params.min_speed..=self.params.max_speed);
            let heading = (waypoints[0].position() - start).angle();
            let true_class = self.random_class();
            self.humans.push(HumanAgent {
                id: self.humans.len() as u32,
                pose: Pose2D::new(start.x, start.y, heading),
                body_radius: r,
                speed,
                waypoints,
                true_class,
                next_waypoint: 0,
            });
            return Ok(());
        }
        Err(WorldError::Generation("could not place human".into()))
    }

    fn robot_start(&mut self) -> Result<Pose2D, WorldError> {
        let clearance = self.params.robot_radius + 0.5;
        for _ in 0..self.params.max_retries {
            let p = self.uniform_point(clearance);
            if self.clear_of_walls(p, clearance) && self.clear_of_humans(p, clearance) {
                let theta = self.rng.random_range(-PI..PI);
                return Ok(Pose2D::new(p.x, p.y, theta));
            }
        }
        Err(WorldError::Generation("could not place robot".into()))
    }

    fn scattered(&mut self) -> Result<Pose2D, WorldError> {
        for _ in 0..self.params.obstacle_count {
            self.random_obstacle(&[])?;
        }
        let robot = self.robot_start()?;
        for _ in 0..self.params.human_count {
            self.random_human(robot.position())?;
        }
        Ok(robot)
    }

    fn occlusion(&mut self) -> Result<Pose2D, WorldError> {
        let p = self.params;
        if p.human_count == 0 {
            return self.scattered();
        }
        let r = p.human_radius;
        for _ in 0..p.max_retries {
            self.obstacles.clear();
            self.humans.clear();
            self.corridor = None;

            let robot_pos = Vec2::new(
                self.rng.random_range(1.0..2.0),
                self.rng.random_range(p.height * 0.3..p.height * 0.7),
            );
            let heading = self.rng.random_range(-0.35..0.35);
            let dist = self.rng.random_range(3.5..5.0);
            let bearing = self.rng.random_range(-0.3..0.3);
            let target_pos = robot_pos + Vec2::from_angle(heading + bearing) * dist;
            if !self.bounds.contains(target_pos) || target_pos.x > p.width - 1.0 {
                continue;
            }
            let los = target_pos - robot_pos;
            let los_dir = los * (1.0 / los.norm());
            let lateral = los_dir.rotate(PI / 2.0);
            let side = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let frac = self.rng.random_range(0.55..0.75);
            let occluder_center = robot_pos + los * frac;
            // Shadow half-width of the target disc at the occluder's range.
            let shadow = r * frac;
            let edge_offset = self.rng.random_range(-0.6..0.6) * shadow;

            let mut next_id = 0u32;
            let use_wall = self.rng.random_bool(0.5);
            if use_wall {
                let len = self.rng.random_range(1.0..1.6);
                let a = occluder_center + lateral * (side * edge_offset);
                let b = a + lateral * (side * len);
                self.obstacles.push(Polyline { points: vec![a, b] });
            } else {
                // A standing pedestrian whose disc edge sits near the line of sight.
                let c = occluder_center + lateral * (side * (edge_offset + r));
                let true_class = self.random_class();
                self.humans.push(HumanAgent {
                    id: next_id,
                    pose: Pose2D::new(c.x, c.y, -los_dir.angle()),
                    body_radius: r,
                    speed: 0.0,
                    waypoints: vec![Pose2D::new(c.x, c.y, 0.0)],
                    true_class,
                    next_waypoint: 0,
                });
                next_id += 1;
            }
            // Slow target dithering around its start.
            let n = p.waypoints_per_human.max(2);
            let mut waypoints = Vec::with_capacity(n);
            for k in 0..n {
                let angle = self.rng.random_range(-PI..PI);
                let rad = if k == 0 {
                    0.0
                } else {
                    self.rng.random_range(0.3..0.8)
                };
                let w = target_pos + Vec2::from_angle(angle) * rad;
                waypoints.push(Pose2D::new(w.x, w.y, 0.0));
            }
            let true_class = self.random_class();
            let target = HumanAgent {
                id: next_id,
                pose: Pose2D::new(target_pos.x, target_pos.y, -los_dir.angle()),
                body_radius: r,
                speed: self.rng.random_range(0.1..0.25),
                waypoints,
                true_class,
                next_waypoint: 1,
            };
            let target_ok = target.waypoints.iter().all(|w| {
                let q = w.position();
                self.bounds.contains(q)
                    && self.clear_of_walls(q, r + 0.1)
                    && self.clear_of_humans(q, r + 0.1)
            }) && self.clear_of_walls(target_pos, r + 0.1)
                && self.clear_of_humans(target_pos, r + 0.05);
            let robot_ok = self.clear_of_walls(robot_pos, p.robot_radius + 0.4)
                && self.clear_of_humans(robot_pos, p.robot_radius + 0.4);
            if !target_ok || !robot_ok {
                continue;
            }
            self.humans.push(target);

            self.corridor = Some(Segment::new(robot_pos, target_pos));
            let mut keep_clear = vec![(robot_pos, p.robot_radius + 1.0), (target_pos, r + 1.0)];
            keep_clear
                .extend((1..8).map(|k| (robot_pos + los * (k as f64 / 8.0), p.robot_radius + 0.6)));
            let mut failed = false;
            let extra_obstacles = p.obstacle_count.saturating_sub(usize::from(use_wall));
            for _ in 0..extra_obstacles {
                if self.random_obstacle(&keep_clear).is_err() {
                    failed = true;
                    break;
                }
            }
            if failed {
                continue;
            }
            let extra_humans = p.human_count.saturating_sub(self.humans.len());
            for _ in 0..extra_humans {
                if self.random_human(robot_pos).is_err() {
                    failed = true;
                    break;
                }
            }
            if failed {
                continue;
            }
            for (i, h) in self.humans.iter_mut().enumerate() {
                h.id = i as u32;
            }
            return Ok(Pose2D::new(robot_pos.x, robot_pos.y, heading));
        }
        Err(WorldError::Generation(
            "could not build occlusion layout".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot_at(x: f64, y: f64, theta: f64) -> RobotState {
        RobotState::new(Pose2D::new(x, y, theta), 0.3)
    }

    fn walker(id: u32, x: f64, y: f64, speed: f64, waypoints: &[(f64, f64)]) -> HumanAgent {
        HumanAgent {
            id,
            pose: Pose2D::new(x, y, 0.0),
            body_radius: 0.3,
            speed,
            waypoints: waypoints
                .iter()
                .map(|&(x, y)| Pose2D::new(x, y, 0.0))
                .collect(),
            true_class: 0,
            next_waypoint: 0,
        }
    }

    #[test]
    fn zero_velocity_keeps_pose() {
        let s = robot_at(0.0, 0.0, 0.0);
        let next = step_robot(&s, Velocity::ZERO, 0.1).unwrap();
        assert_eq!(next.pose, s.pose);
    }

    #[test]
    fn unit_forward_speed_moves_a_tenth() {
        let next = step_robot(&robot_at(0.0, 0.0, 0.0), Velocity::new(1.0, 0.0), 0.1).unwrap();
        assert!((next.pose.x - 0.1).abs() < 1e-15);
        assert_eq!(next.pose.y, 0.0);
        assert_eq!(next.pose.theta, 0.0);
    }

    #[test]
    fn commands_are_clamped_before_integration() {
        let next = step_robot(&robot_at(0.0, 0.0, 0.0), Velocity::new(1.5, -2.0), 0.1).unwrap();
        assert_eq!(next.velocity, Velocity::new(1.0, -1.0));
        assert!((next.pose.x - 0.1).abs() < 1e-15);
        assert!((next.pose.theta + 0.1).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let s = robot_at(0.0, 0.0, 0.0);
        assert!(step_robot(&s, Velocity::ZERO, 0.0).is_err());
        assert!(step_robot(&s, Velocity::new(f64::NAN, 0.0), 0.1).is_err());
        let mut bad = s;
        bad.pose.x = f64::INFINITY;
        assert!(step_robot(&bad, Velocity::ZERO, 0.1).is_err());
    }

    #[test]
    fn human_at_single_waypoint_stays() {
        let h = walker(0, 1.0, 1.0, 1.0, &[(1.0, 1.0)]);
        let next = step_humans(&[h.clone()], &[], 0.1);
        assert_eq!(next[0].pose, h.pose);
    }

    #[test]
    fn human_advances_in_a_straight_line() {
        let h = walker(0, 0.0, 0.0, 1.0, &[(1.0, 0.0)]);
        let next = step_humans(&[h], &[], 0.1);
        assert!((next[0].pose.x - 0.1).abs() < 1e-12);
        assert!(next[0].pose.y.abs() < 1e-12);
    }

    #[test]
    fn waypoint_switches_inside_capture_radius() {
        let h = walker(0, 0.75, 0.0, 1.0, &[(1.0, 0.0), (1.0, 5.0)]);
        let next = step_humans(&[h], &[], 0.1);
        assert_eq!(next[0].next_waypoint, 1);
        assert!(next[0].pose.y > 0.0);
    }

    #[test]
    fn head_on_pedestrians_stay_separated() {
        let a = walker(0, 0.0, 0.0, 1.0, &[(5.0, 0.0)]);
        let b = walker(1, 0.65, 0.0, 1.0, &[(-5.0, 0.0)]);
        let mut humans = vec![a, b];
        for _ in 0..5 {
            humans = step_humans(&humans, &[], 0.1);
            let d = humans[0].position().distance(humans[1].position());
            assert!(d >= 0.6, "overlap: {d}");
        }
    }

    #[test]
    fn collision_fixtures() {
        let wall = [Segment::new(Vec2::new(1.0, -2.0), Vec2::new(1.0, 2.0))];
        assert!(!check_collision(&robot_at(0.0, 0.0, 0.0), &[], &wall));
        assert!(check_collision(&robot_at(0.8, 0.0, 0.0), &[], &wall));
        let h = walker(0, 2.0, 2.0, 0.0, &[]);
        assert!(check_collision(&robot_at(2.0, 2.0, 0.0), &[h], &[]));
    }

    #[test]
    fn swept_test_catches_thin_wall_crossing() {
        let wall = [Segment::new(Vec2::new(1.0, -2.0), Vec2::new(1.0, 2.0))];
        // Endpoints both clear of the wall, path goes through it.
        assert!(swept_collision(
            Vec2::new(0.5, 0.0),
            Vec2::new(1.5, 0.0),
            0.3,
            &wall
        ));
        assert!(!swept_collision(
            Vec2::new(0.0, 0.0),
            Vec2::new(0.5, 0.0),
            0.3,
            &wall
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let params = GeneratorParams::default();
        let a = generate_scenario(&params, 11).unwrap();
        let b = generate_scenario(&params, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&params, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_crowd_is_valid() {
        let params = GeneratorParams {
            human_count: 0,
            ..GeneratorParams::default()
        };
        let s = generate_scenario(&params, 3).unwrap();
        assert!(s.humans.is_empty());
        let params = GeneratorParams {
            human_count: 0,
            ..GeneratorParams::occlusion()
        };
        assert!(generate_scenario(&params, 3).unwrap().humans.is_empty());
    }

    #[test]
    fn generated_starts_are_collision_free() {
        let params = GeneratorParams {
            human_count: 6,
            obstacle_count: 4,
            ..GeneratorParams::default()
        };
        let s = generate_scenario(&params, 7).unwrap();
        assert_eq!(s.humans.len(), 6);
        let walls = s.walls();
        for (i, h) in s.humans.iter().enumerate() {
            assert!(h.waypoints.len() >= 2);
            for other in &s.humans[i + 1..] {
                let probe = RobotState::new(h.pose, h.body_radius);
                assert!(!check_collision(&probe, std::slice::from_ref(other), &[]));
            }
            let probe = RobotState::new(h.pose, h.body_radius);
            assert!(!check_collision(&probe, &[], &walls));
        }
        assert!(!check_collision(
            &RobotState::new(s.robot_start, s.robot_radius),
            &s.humans,
            &walls
        ));
    }

    #[test]
    fn too_crowded_room_fails_cleanly() {
        let params = GeneratorParams {
            width: 2.0,
            height: 2.0,
            human_count: 40,
            obstacle_count: 0,
            max_retries: 20,
            ..GeneratorParams::default()
        };
        assert!(matches!(
            generate_scenario(&params, 1),
            Err(WorldError::Generation(_))
        ));
    }

    #[test]
    fn suite_json_rejects_wrong_schema() {
        let suite = generate_suite(&GeneratorParams::default(), 1, 2).unwrap();
        let text = suite.to_json();
        assert_eq!(ScenarioSuite::from_json(&text).unwrap(), suite);
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(matches!(
            ScenarioSuite::from_json(&bumped),
            Err(WorldError::Format(_))
        ));
    }
}
