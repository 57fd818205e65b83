//! Cluster pedestrian box dimensions from a generated suite into anchor
//! priors, then check how well the priors match the ground truth boxes.

use amodal_pursuit::detection::project_bbox;
use amodal_pursuit::percept::{cluster_priors, match_priors, BBox};
use amodal_pursuit::sensing::CameraConfig;
use amodal_pursuit::world::{generate_suite, GeneratorParams};

fn main() {
    let suite = generate_suite(&GeneratorParams::occlusion(), 0, 40).expect("suite");
    let camera = CameraConfig::default();
    let mut boxes = Vec::new();
    for sc in &suite.scenarios {
        for h in &sc.humans {
            if camera.in_view(&sc.robot_start, h.position()) {
                let b = project_bbox(h, &sc.robot_start, &camera, 244);
                if b.width() > 1.0 && b.height() > 1.0 {
                    boxes.push(b);
                }
            }
        }
    }
    let dims: Vec<(f64, f64)> = boxes.iter().map(|b| (b.width(), b.height())).collect();
    let priors = cluster_priors(&dims, 5, 7).expect("enough boxes");
    println!(
        "{} boxes clustered into {} priors",
        boxes.len(),
        priors.len()
    );
    for p in &priors {
        println!("  {:6.1} x {:6.1}", p.width, p.height);
    }
    // Place each prior at the centre of every box and match.
    let mut placed = Vec::new();
    for b in &boxes {
        let (cx, cy) = b.center();
        for p in &priors {
            placed.push(
                BBox::new(
                    cx - p.width / 2.0,
                    cy - p.height / 2.0,
                    cx + p.width / 2.0,
                    cy + p.height / 2.0,
                )
                .expect("box"),
            );
        }
    }
    let m = match_priors(&placed, &boxes, 0.5).expect("match");
    let mean_best = m.best.iter().map(|b| b.distance).sum::<f64>() / m.best.len() as f64;
    let positives = m.positives.iter().filter(|p| p.is_some()).count();
    println!(
        "mean best d_change {mean_best:.3}; {positives}/{} placed priors are positives",
        placed.len()
    );
}
