//! Toy task: turn toward a fixed beacon.
//!
//! The robot sits at the origin with a random heading and sees only the goal
//! features (the beacon's range and bearing). Each tick pays the decrease in
//! absolute heading error, so a good policy rotates toward the beacon and
//! then holds still or drives at it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::action::ActionSpace;
use super::env::{Environment, Step};
use super::network::{NetworkConfig, Observation};
use super::tape::Tensor;
use super::PolicyError;
use crate::geometry::Vec2;
use crate::world::{step_robot, Pose2D, RobotState, Velocity};

#[derive(Debug, Clone)]
pub struct BeaconEnv {
    net: NetworkConfig,
    actions: ActionSpace,
    robot: RobotState,
    beacon: Vec2,
    v_prev: Velocity,
    tick: u64,
    pub horizon: u64,
    pub dt: f64,
}

impl BeaconEnv {
    pub fn new(net: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dir = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let range = rng.random_range(2.0..5.0);
        Self {
            net: net.clone(),
            actions: ActionSpace::uniform(5, 5),
            robot: RobotState::new(Pose2D::new(0.0, 0.0, heading), 0.25),
            beacon: Vec2::new(range * dir.cos(), range * dir.sin()),
            v_prev: Velocity::ZERO,
            tick: 0,
            horizon: 30,
            dt: 0.25,
        }
    }

    pub fn heading_error(&self) -> f64 {
        self.robot.pose.polar_to(self.beacon).1.abs()
    }

    /// A small network shaped for this task's empty sensor inputs.
    pub fn network() -> NetworkConfig {
        NetworkConfig {
            mask_resolution: 16,
            mask_history: 1,
            conv_channels: [1, 1, 1, 1],
            embed_dim: 4,
            lidar_beams: 8,
            lidar_depth: 1,
            lidar_conv_channels: [1, 1],
            lidar_fc: 4,
            hidden: 32,
            ..NetworkConfig::desk()
        }
    }
}

impl Environment for BeaconEnv {
    fn observe(&self) -> Observation {
        let r = self.net.mask_resolution;
        Observation {
            masks: Tensor::zeros(&[self.net.mask_history, r, r]),
            lidar: Tensor::zeros(&[self.net.lidar_depth, self.net.lidar_beams]),
            v_prev: self.v_prev,
            goal: Some(self.robot.pose.polar_to(self.beacon)),
        }
    }

    fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    fn step(&mut self, action: usize) -> Result<Step, PolicyError> {
        let before = self.heading_error();
        let cmd = self.actions.velocity(action);
        self.robot = step_robot(&self.robot, cmd, self.dt)?;
        self.v_prev = cmd;
        self.tick += 1;
        let reward = before - self.heading_error();
        Ok(Step {
            reward,
            done: self.tick >= self.horizon,
            collided: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turning_toward_the_beacon_pays() {
        let mut env = BeaconEnv::new(&BeaconEnv::network(), 4);
        let bearing = env.robot.pose.polar_to(env.beacon).1;
        // action index = v_index * 5 + w_index; w levels run -1..1
        let toward = if bearing > 0.0 { 4 } else { 0 };
        let away = 4 - toward;
        let mut a = env.clone();
        assert!(a.step(toward).unwrap().reward > 0.0);
        assert!(env.step(away).unwrap().reward < 0.0);
    }

    #[test]
    fn episode_ends_at_horizon() {
        let mut env = BeaconEnv::new(&BeaconEnv::network(), 0);
        let steps = (0..).take_while(|_| !env.step(12).unwrap().done).count() + 1;
        assert_eq!(steps as u64, env.horizon);
    }
}
