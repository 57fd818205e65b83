//! Embodied recognition in a simulated crowd.
//!
//! A robot watches pedestrians through a simulated camera and lidar. A
//! synthetic detector reports per-pedestrian confidence that degrades with
//! occlusion and distance; when a detection is weak the robot pursues that
//! pedestrian to a better viewpoint. The pursuit policy is a small
//! convolutional network trained by policy gradient on a reverse-mode
//! gradient core, and is compared against passive, random and shortest-path
//! movement.

pub mod detection;
pub mod geometry;
pub mod harness;
pub mod percept;
pub mod planner;
pub mod policy;
pub mod sensing;
pub mod world;
