//! Casts a lidar scan from the robot's start pose in a generated scenario
//! and writes it as CSV to stdout.

use amodal_pursuit::sensing::{raycast_lidar, write_scan_csv, LidarConfig};
use amodal_pursuit::world::{generate_scenario, GeneratorParams, WorldState};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let scenario = generate_scenario(&GeneratorParams::occlusion(), seed).expect("scenario");
    let world = WorldState::from_scenario(&scenario);
    let scan = raycast_lidar(&world, &world.robot.pose, &LidarConfig::default());
    let hits = scan.ranges.iter().filter(|&&r| r < scan.max_range).count();
    eprintln!(
        "scenario {seed}: {} beams, {hits} returns inside {} m",
        scan.ranges.len(),
        scan.max_range
    );
    write_scan_csv(&scan, &mut std::io::stdout().lock()).expect("stdout");
}
