//! Associates detections into tracks over an episode with a slowly turning
//! robot, and reports which track would be selected for pursuit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use amodal_pursuit::detection::{detect, select_target, OracleConfig, Tracker, TrackerConfig};
use amodal_pursuit::sensing::CameraConfig;
use amodal_pursuit::world::{generate_scenario, GeneratorParams, Velocity, WorldState};

fn main() {
    let scenario = generate_scenario(&GeneratorParams::occlusion(), 5).expect("scenario");
    let mut world = WorldState::from_scenario(&scenario);
    let (camera, oracle) = (CameraConfig::default(), OracleConfig::default());
    let mut tracker = Tracker::new(TrackerConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..scenario.duration {
        let pose = world.robot.pose;
        let dets = detect(
            &world,
            &pose,
            &camera,
            &oracle,
            scenario.class_names.len(),
            &mut rng,
        );
        tracker.update(&dets);
        if world.tick.is_multiple_of(12) {
            let target = select_target(tracker.tracks(), oracle.lambda);
            let summary: Vec<String> = tracker
                .tracks()
                .iter()
                .map(|t| {
                    format!(
                        "#{}(h{}) c={:.2} age={}",
                        t.track_id,
                        t.birth_human,
                        t.confidence(),
                        t.age
                    )
                })
                .collect();
            println!(
                "tick {:>3} target {:?}: {}",
                world.tick,
                target,
                summary.join("  ")
            );
        }
        world.step(Velocity { v: 0.0, w: 0.4 }).expect("step");
    }
}
