//! Episode environments and the rollout loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionSpace;
use super::network::{evaluate, sample_action, NetworkConfig, Observation, PolicyParams};
use super::reward::{reward_terms, RewardConfig, RewardContext, RewardTerms};
use super::tape::Tensor;
use super::PolicyError;
use crate::detection::{detect, select_target, OracleConfig, Tracker, TrackerConfig};
use crate::geometry::Vec2;
use crate::percept::iou;
use crate::sensing::{
    raycast_lidar, render_amodal_mask, render_mask, CameraConfig, LidarConfig, LidarStack, SegMask,
    SegMaskStack,
};
use crate::world::{Scenario, Velocity, WorldState};

/// Result of advancing an environment by one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
}

/// Anything a discrete-action policy can be trained on.
pub trait Environment {
    fn observe(&self) -> Observation;
    fn action_space(&self) -> &ActionSpace;
    fn step(&mut self, action: usize) -> Result<Step, PolicyError>;
    /// Average confidence change of the pursued target per pursuit tick, if
    /// the notion applies.
    fn mean_delta_confidence(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub camera: CameraConfig,
    pub lidar: LidarConfig,
    pub oracle: OracleConfig,
    pub tracker: TrackerConfig,
    pub reward: RewardConfig,
    pub mask_resolution: usize,
    pub mask_history: usize,
    /// End the episode once the pursued target's confidence reaches the
    /// threshold.
    pub terminate_on_arrival: bool,
    /// Overrides the scenario duration when set.
    pub horizon: Option<u64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig::default(),
            lidar: LidarConfig::default(),
            oracle: OracleConfig::default(),
            tracker: TrackerConfig::default(),
            reward: RewardConfig::default(),
            mask_resolution: 61,
            mask_history: 3,
            terminate_on_arrival: false,
            horizon: None,
        }
    }
}

impl EnvConfig {
    /// Matches the sensor layout expected by a network configuration.
    pub fn for_network(net: &NetworkConfig) -> Self {
        Self {
            mask_resolution: net.mask_resolution,
            mask_history: net.mask_history,
            lidar: LidarConfig {
                beams: net.lidar_beams,
                ..LidarConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    Collision,
    Horizon,
    Arrival,
}

/// A detection as it appears in an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDetection {
    pub human_id: u32,
    pub track_id: u64,
    pub confidence: f64,
    pub predicted_class: usize,
    pub true_class: usize,
    /// Ground-truth pedestrian that started the track.
    pub track_birth_human: u32,
}

/// First sighting of a pedestrian within an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstDetection {
    pub tick: u64,
    pub human_id: u32,
    pub predicted_class: usize,
    pub true_class: usize,
    /// Overlap of the visible and full silhouettes at that tick.
    pub mask_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Tick at which the command was issued.
    pub tick: u64,
    pub action: Option<usize>,
    pub velocity: Velocity,
    pub robot: [f64; 3],
    pub target_track: Option<u64>,
    pub target_human: Option<u32>,
    pub pursuing: bool,
    pub p_prev: Option<f64>,
    pub p_now: Option<f64>,
    pub reward: RewardTerms,
    pub collided: bool,
    /// Detections after the tick.
    pub detections: Vec<LoggedDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario_seed: u64,
    pub policy: String,
    pub initial_detections: Vec<LoggedDetection>,
    pub ticks: Vec<TickRecord>,
    pub first_detections: Vec<FirstDetection>,
    pub terminal: Option<TerminalCause>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.ticks.iter().map(|t| t.reward.total).sum()
    }

    pub fn collided(&self) -> bool {
        self.terminal == Some(TerminalCause::Collision)
    }

    /// Detections visible at `tick` (0 = before the first command).
    pub fn detections_at(&self, tick: u64) -> Option<&[LoggedDetection]> {
        if tick == 0 {
            return Some(&self.initial_detections);
        }
        self.ticks
            .get(tick as usize - 1)
            .map(|t| t.detections.as_slice())
    }

    /// Tick at which the first pursuit target was locked, with its human.
    pub fn pursuit_start(&self) -> Option<(u64, u32)> {
        self.ticks
            .iter()
            .find_map(|t| t.target_human.map(|h| (t.tick, h)))
    }
}

/// Embodied pursuit in a simulated crowd.
pub struct PursuitEnv {
    pub config: EnvConfig,
    pub world: WorldState,
    actions: ActionSpace,
    class_count: usize,
    horizon: u64,
    rng: ChaCha8Rng,
    tracker: Tracker,
    lidar: LidarStack,
    masks: SegMaskStack,
    target: Option<u64>,
    arrived: bool,
    v_prev: Velocity,
    done: bool,
    seen: Vec<u32>,
    log: EpisodeLog,
    delta_sum: f64,
    delta_count: usize,
}

impl PursuitEnv {
    pub fn new(
        scenario: &Scenario,
        config: EnvConfig,
        actions: ActionSpace,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        scenario.validate()?;
        let world = WorldState::from_scenario(scenario);
        let lidar = LidarStack::new(raycast_lidar(&world, &world.robot.pose, &config.lidar));
        let mut env = Self {
            horizon: config.horizon.unwrap_or(scenario.duration).max(1),
            masks: SegMaskStack::new(config.mask_resolution, config.mask_history),
            tracker: Tracker::new(config.tracker),
            rng: ChaCha8Rng::seed_from_u64(seed),
            class_count: scenario.class_names.len().max(1),
            config,
            world,
            actions,
            lidar,
            target: None,
            arrived: false,
            v_prev: Velocity::ZERO,
            done: false,
            seen: Vec::new(),
            log: EpisodeLog {
                scenario_seed: scenario.rng_seed,
                policy: String::new(),
                initial_detections: Vec::new(),
                ticks: Vec::new(),
                first_detections: Vec::new(),
                terminal: None,
            },
            delta_sum: 0.0,
            delta_count: 0,
        };
        env.log.initial_detections = env.sense();
        env.retarget();
        env.push_target_mask();
        Ok(env)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    pub fn target(&self) -> Option<u64> {
        self.target
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Estimated world position of the pursued target.
    pub fn target_position(&self) -> Option<Vec2> {
        self.target
            .and_then(|id| self.tracker.get(id))
            .map(|t| t.est_pose.position())
    }

    fn target_confidence_now(&self) -> Option<f64> {
        let t = self.tracker.get(self.target?)?;
        (t.latest().tick == self.world.tick && t.misses == 0).then(|| t.confidence())
    }

    /// Detect, associate, and record first sightings.
    fn sense(&mut self) -> Vec<LoggedDetection> {
        let pose = self.world.robot.pose;
        let dets = detect(
            &self.world,
            &pose,
            &self.config.camera,
            &self.config.oracle,
            self.class_count,
            &mut self.rng,
        );
        let ids = self.tracker.update(&dets);
        let mut out = Vec::with_capacity(dets.len());
        for (d, &track_id) in dets.iter().zip(&ids) {
            let human = self
                .world
                .human(d.human_id)
                .expect("detections refer to live humans");
            if !self.seen.contains(&d.human_id) {
                self.seen.push(d.human_id);
                let res = self.config.mask_resolution;
                let modal = render_mask(human, &pose, &self.world, &self.config.camera, res);
                let amodal =
                    render_amodal_mask(human, &pose, &self.world, &self.config.camera, res);
                self.log.first_detections.push(FirstDetection {
                    tick: self.world.tick,
                    human_id: d.human_id,
                    predicted_class: d.predicted_class,
                    true_class: human.true_class,
                    mask_iou: iou(&modal.values, &amodal.values).expect("masks share a resolution"),
                });
            }
            out.push(LoggedDetection {
                human_id: d.human_id,
                track_id,
                confidence: d.confidence,
                predicted_class: d.predicted_class,
                true_class: human.true_class,
                track_birth_human: self.tracker.birth_human(track_id).unwrap_or(d.human_id),
            });
        }
        out
    }

    fn retarget(&mut self) {
        if let Some(id) = self.target {
            if self.tracker.get(id).is_none() {
                self.target = None;
            }
        }
        if self.target.is_none() {
            self.target = select_target(self.tracker.tracks(), self.config.oracle.lambda);
            self.arrived = false;
        }
    }

    fn push_target_mask(&mut self) {
        let res = self.config.mask_resolution;
        let tick = self.world.tick;
        let mask = match self.target.and_then(|id| self.tracker.get(id)) {
            Some(t) if t.misses == 0 => {
                let hid = t.latest().human_id;
                match self.world.human(hid) {
                    Some(h) => render_mask(
                        h,
                        &self.world.robot.pose,
                        &self.world,
                        &self.config.camera,
                        res,
                    ),
                    None => SegMask::empty(res, hid, tick),
                }
            }
            _ => SegMask::empty(res, u32::MAX, tick),
        };
        self.masks.push(mask);
    }

    fn goal_polar(&self) -> Option<(f64, f64)> {
        self.target_position()
            .map(|p| self.world.robot.pose.polar_to(p))
    }

    /// Advances the world by one continuous command.
    pub fn step_velocity(
        &mut self,
        velocity: Velocity,
        action: Option<usize>,
    ) -> Result<Step, PolicyError> {
        if self.done {
            return Err(PolicyError::Config(
                "step called on a finished episode".into(),
            ));
        }
        let velocity = velocity.clamped();
        let tick = self.world.tick;
        let lambda = self.config.oracle.lambda;
        let target = self.target;
        let target_human = target
            .and_then(|id| self.tracker.get(id))
            .map(|t| t.birth_human);
        let p_prev = self.target_confidence_now();
        let pursuing = target.is_some_and(|id| {
            self.tracker
                .get(id)
                .is_some_and(|t| t.confidence() < lambda)
        });
        let goal = self.target_position();
        let d_before = goal.map(|g| self.world.robot.pose.position().distance(g));

        let outcome = self.world.step(velocity)?;
        let scan = raycast_lidar(&self.world, &self.world.robot.pose, &self.config.lidar);
        self.lidar.push(scan);
        let detections = self.sense();

        let p_now = self.target_confidence_now();
        let arrived = pursuing && !self.arrived && p_now.is_some_and(|p| p >= lambda);
        if arrived {
            self.arrived = true;
        }
        let progress = match (goal, d_before) {
            (Some(g), Some(d0)) => d0 - self.world.robot.pose.position().distance(g),
            _ => 0.0,
        };
        let ctx = RewardContext {
            collided: outcome.collided,
            w: velocity.w,
            pursuing,
            p_prev,
            p_now,
            arrived,
            progress,
        };
        let terms = reward_terms(&ctx, &self.config.reward);
        if pursuing {
            self.delta_sum += p_now.unwrap_or(0.0) - p_prev.unwrap_or(0.0);
            self.delta_count += 1;
        }

        self.v_prev = velocity;
        self.retarget();
        self.push_target_mask();

        let pose = self.world.robot.pose;
        self.log.ticks.push(TickRecord {
            tick,
            action,
            velocity,
            robot: [pose.x, pose.y, pose.theta],
            target_track: target,
            target_human,
            pursuing,
            p_prev,
            p_now,
            reward: terms,
            collided: outcome.collided,
            detections,
        });

        let cause = if outcome.collided {
            Some(TerminalCause::Collision)
        } else if arrived && self.config.terminate_on_arrival {
            Some(TerminalCause::Arrival)
        } else if self.world.tick >= self.horizon {
            Some(TerminalCause::Horizon)
        } else {
            None
        };
        self.done = cause.is_some();
        self.log.terminal = cause;
        Ok(Step {
            reward: terms.total,
            done: self.done,
            collided: outcome.collided,
        })
    }
}

impl Environment for PursuitEnv {
    fn observe(&self) -> Observation {
        let res = self.config.mask_resolution;
        let hist = self.config.mask_history;
        Observation {
            masks: Tensor::from_vec(&[hist, res, res], self.masks.to_channels()),
            lidar: Tensor::from_vec(
                &[LidarStack::DEPTH, self.lidar.beams()],
                self.lidar.normalized(),
            ),
            v_prev: self.v_prev,
            goal: self.goal_polar(),
        }
    }

    fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    fn step(&mut self, action: usize) -> Result<Step, PolicyError> {
        let v = self.actions.velocity(action);
        self.step_velocity(v, Some(action))
    }

    fn mean_delta_confidence(&self) -> Option<f64> {
        (self.delta_count > 0).then(|| self.delta_sum / self.delta_count as f64)
    }
}

/// Everything a controller may look at when choosing a command.
pub struct ControlInput<'a> {
    pub env: &'a PursuitEnv,
    pub observation: &'a Observation,
}

/// A movement strategy for the pursuit environment.
pub trait Controller {
    fn name(&self) -> String;
    /// Returns the command and, for discrete policies, the action index.
    fn command<R: Rng + ?Sized>(
        &mut self,
        input: &ControlInput,
        rng: &mut R,
    ) -> Result<(Velocity, Option<usize>), PolicyError>;
}

/// Samples actions from a trained network.
pub struct LearnedController<'p> {
    pub params: &'p PolicyParams,
    pub greedy: bool,
}

impl Controller for LearnedController<'_> {
    fn name(&self) -> String {
        "learned".into()
    }

    fn command<R: Rng + ?Sized>(
        &mut self,
        input: &ControlInput,
        rng: &mut R,
    ) -> Result<(Velocity, Option<usize>), PolicyError> {
        let (probs, _) = evaluate(self.params, input.observation)?;
        let a = if self.greedy {
            (0..probs.len())
                .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
                .unwrap_or(0)
        } else {
            sample_action(&probs, rng)
        };
        Ok((input.env.action_space().velocity(a), Some(a)))
    }
}

/// Runs a controller until the episode ends. `seed` drives both the
/// detector noise and the controller's own randomness, on separate streams.
pub fn rollout<C: Controller>(
    scenario: &Scenario,
    controller: &mut C,
    config: &EnvConfig,
    actions: &ActionSpace,
    seed: u64,
) -> Result<EpisodeLog, PolicyError> {
    let mut env = PursuitEnv::new(scenario, config.clone(), actions.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    while !env.is_done() {
        let obs = env.observe();
        let (v, a) = controller.command(
            &ControlInput {
                env: &env,
                observation: &obs,
            },
            &mut rng,
        )?;
        env.step_velocity(v, a)?;
    }
    let mut log = env.into_log();
    log.policy = controller.name();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, GeneratorParams, HumanAgent, Pose2D};

    struct Still;
    impl Controller for Still {
        fn name(&self) -> String {
            "still".into()
        }
        fn command<R: Rng + ?Sized>(
            &mut self,
            _: &ControlInput,
            _: &mut R,
        ) -> Result<(Velocity, Option<usize>), PolicyError> {
            Ok((Velocity::ZERO, None))
        }
    }

    fn occlusion_scenario(seed: u64) -> Scenario {
        generate_scenario(&GeneratorParams::occlusion(), seed).unwrap()
    }

    #[test]
    fn passive_robot_never_moves() {
        let s = occlusion_scenario(3);
        let log = rollout(
            &s,
            &mut Still,
            &EnvConfig::default(),
            &ActionSpace::default(),
            1,
        )
        .unwrap();
        assert!(log
            .ticks
            .iter()
            .all(|t| t.robot == [s.robot_start.x, s.robot_start.y, s.robot_start.theta]));
        assert_eq!(log.ticks.len() as u64, s.duration);
    }

    #[test]
    fn rollouts_are_reproducible() {
        let s = occlusion_scenario(4);
        let params =
            PolicyParams::init(&NetworkConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = EnvConfig {
            horizon: Some(10),
            ..EnvConfig::default()
        };
        let run = || {
            rollout(
                &s,
                &mut LearnedController {
                    params: &params,
                    greedy: false,
                },
                &cfg,
                &ActionSpace::default(),
                7,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clear_close_pedestrian_is_never_pursued() {
        let mut s = occlusion_scenario(5);
        s.obstacles.clear();
        s.humans = vec![HumanAgent {
            id: 0,
            pose: Pose2D::new(
                s.robot_start.x + 1.5 * s.robot_start.theta.cos(),
                s.robot_start.y + 1.5 * s.robot_start.theta.sin(),
                0.0,
            ),
            body_radius: 0.3,
            speed: 0.0,
            waypoints: vec![],
            true_class: 0,
            next_waypoint: 0,
        }];
        let log = rollout(
            &s,
            &mut Still,
            &EnvConfig::default(),
            &ActionSpace::default(),
            2,
        )
        .unwrap();
        assert!(log.initial_detections[0].confidence >= 0.6);
        assert!(log
            .ticks
            .iter()
            .all(|t| t.target_track.is_none() && !t.pursuing));
    }

    #[test]
    fn occlusion_scenarios_trigger_pursuit() {
        let started = (0..10)
            .filter(|&i| {
                let log = rollout(
                    &occlusion_scenario(100 + i),
                    &mut Still,
                    &EnvConfig {
                        horizon: Some(3),
                        ..Default::default()
                    },
                    &ActionSpace::default(),
                    i,
                )
                .unwrap();
                log.pursuit_start().is_some_and(|(t, _)| t == 0)
            })
            .count();
        assert!(started >= 8, "{started}");
    }
}
