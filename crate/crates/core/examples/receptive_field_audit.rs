//! Receptive fields of a small conv stack, and which layer first covers
//! each of a few anchor box sizes.

use amodal_pursuit::percept::{
    assign_priors_to_layers, parse_layer_stack, receptive_fields, PriorBox,
};

fn main() {
    let stack = parse_layer_stack("1 3\n1 3\n2 2\n1 3\n1 3\n2 2\n1 3\n1 3\n2 2\n1 3\n")
        .expect("valid stack");
    let rfs = receptive_fields(&stack, 1);
    println!("layer stride kernel rf");
    for (i, (l, rf)) in stack.iter().zip(&rfs).enumerate() {
        println!("{i:>5} {:>6} {:>6} {rf:>3}", l.stride, l.kernel);
    }
    let priors = [
        PriorBox {
            width: 4.0,
            height: 9.0,
        },
        PriorBox {
            width: 12.0,
            height: 30.0,
        },
        PriorBox {
            width: 40.0,
            height: 90.0,
        },
    ];
    for a in assign_priors_to_layers(&rfs, &priors) {
        let layer = a.layer.map_or("none".to_string(), |l| l.to_string());
        println!(
            "prior {:>4}x{:<4} needs rf {:>5.0}: layer {layer}",
            a.prior.width, a.prior.height, a.required_rf
        );
    }
}
