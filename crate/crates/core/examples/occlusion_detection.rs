//! Runs the synthetic detector as the robot drives straight ahead and shows
//! how confidence follows visibility and distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use amodal_pursuit::detection::{detect, OracleConfig};
use amodal_pursuit::sensing::CameraConfig;
use amodal_pursuit::world::{generate_scenario, GeneratorParams, Velocity, WorldState};

fn main() {
    let scenario = generate_scenario(&GeneratorParams::occlusion(), 11).expect("scenario");
    let mut world = WorldState::from_scenario(&scenario);
    let (camera, oracle) = (CameraConfig::default(), OracleConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("tick human visible distance confidence class(pred/true)");
    for _ in 0..scenario.duration {
        if world.tick.is_multiple_of(8) {
            let pose = world.robot.pose;
            for d in detect(
                &world,
                &pose,
                &camera,
                &oracle,
                scenario.class_names.len(),
                &mut rng,
            ) {
                let true_class = world.human(d.human_id).map_or(0, |h| h.true_class);
                println!(
                    "{:>4} {:>5} {:>7.2} {:>8.2} {:>10.3} {}/{}",
                    d.tick,
                    d.human_id,
                    d.visible_frac,
                    d.distance,
                    d.confidence,
                    d.predicted_class,
                    true_class
                );
            }
        }
        world.step(Velocity { v: 0.3, w: 0.0 }).expect("step");
    }
}
