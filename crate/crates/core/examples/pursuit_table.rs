//! Trains a pursuit policy briefly on the desk preset and prints the
//! comparison table against the passive, random and shortest-path
//! baselines on a small held-out suite.
//!
//! `cargo run --release --example pursuit_table -- [iterations] [scenarios]`

use amodal_pursuit::harness::{held_out_suite, run_table, train_policy, ExperimentConfig, Policy};

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let mut cfg = ExperimentConfig::default();
    cfg.train.iterations = args.next().unwrap_or(30);
    cfg.eval.suite_size = args.next().unwrap_or(30);
    let (params, _) = train_policy(&cfg, 0, |s, _| {
        eprintln!(
            "iteration {:>3} return {:>8.2} collisions {:.2}",
            s.iteration, s.mean_return, s.collision_rate
        );
        Ok(())
    })
    .expect("training");
    let suite = held_out_suite(&cfg).expect("suite");
    let policies = [
        Policy::Passive,
        Policy::Random,
        Policy::Shortest,
        Policy::Learned(params),
    ];
    print!(
        "{}",
        run_table(&policies, &suite, &cfg).expect("table").to_text()
    );
}
