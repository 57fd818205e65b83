//! Gradient descent on the learned task weights of the multi-task loss.
//! With the task losses held fixed each sigma settles where sigma^2 is
//! twice its task loss.

use amodal_pursuit::percept::{hybrid_loss, TaskLosses, TaskSigmas};

fn main() {
    let losses = TaskLosses {
        sem: 0.8,
        off: 2.0,
        bbox: 0.3,
        cls: 1.2,
    };
    let mut sigmas = TaskSigmas::from_array([1.0; 4]);
    for step in 0..=400 {
        let (total, grad) = hybrid_loss(&losses, &sigmas).expect("positive sigmas");
        if step % 100 == 0 {
            println!(
                "step {step:>3}  loss {total:.5}  sigmas {:.4?}",
                sigmas.as_array()
            );
        }
        let s = sigmas.as_array();
        sigmas = TaskSigmas::from_array(std::array::from_fn(|i| s[i] - 0.05 * grad[i]));
    }
    let expected: Vec<f64> = losses.as_array().iter().map(|l| (2.0 * l).sqrt()).collect();
    println!("stationary point {expected:.4?}");
}
