//! Trains the policy network on a toy task: turn to face a beacon. Prints
//! the learning curve and the greedy heading error before and after.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use amodal_pursuit::policy::beacon::BeaconEnv;
use amodal_pursuit::policy::env::Environment;
use amodal_pursuit::policy::{evaluate, train, PolicyParams, TrainConfig};

fn final_error(params: &PolicyParams) -> f64 {
    let net = BeaconEnv::network();
    let mut sum = 0.0;
    for s in 0..32 {
        let mut env = BeaconEnv::new(&net, 500 + s);
        loop {
            let (probs, _) = evaluate(params, &env.observe()).unwrap();
            let best = (0..probs.len())
                .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                .unwrap();
            if env.step(best).unwrap().done {
                break;
            }
        }
        sum += env.heading_error().abs();
    }
    sum / 32.0
}

fn main() {
    let net = BeaconEnv::network();
    let mut params = PolicyParams::init(&net, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    println!(
        "mean final |heading error| before: {:.3} rad",
        final_error(&params)
    );
    let cfg = TrainConfig {
        iterations: 300,
        seed: 0,
        ..TrainConfig::default()
    };
    train(
        &mut params,
        |_, _, s| Ok(BeaconEnv::new(&net, s)),
        &cfg,
        |s, _| {
            if s.iteration % 25 == 0 {
                println!(
                    "iteration {:>3} mean return {:.3} entropy {:.3}",
                    s.iteration, s.mean_return, s.entropy
                );
            }
            Ok(())
        },
    )
    .unwrap();
    println!(
        "mean final |heading error| after: {:.3} rad",
        final_error(&params)
    );
}
