//! Builds a synthetic semantic map with two overlapping pedestrians, lets
//! every pixel vote for its object centre, and assembles instances.

use amodal_pursuit::percept::{
    assemble_instances, miou_by_instance, BBox, BoxDetection, ClassMap, InstanceMap, OffsetMap,
};

const W: usize = 32;
const H: usize = 24;

fn main() {
    let truth = [
        BBox::new(4.0, 4.0, 16.0, 22.0).unwrap(),
        BBox::new(12.0, 2.0, 26.0, 20.0).unwrap(),
    ];
    let mut gt_ids = vec![0u32; W * H];
    let mut offsets = vec![[0.0; 2]; W * H];
    for y in 0..H {
        for x in 0..W {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // The later box is in front where the two overlap.
            for (k, b) in truth.iter().enumerate().rev() {
                if px >= b.xmin && px < b.xmax && py >= b.ymin && py < b.ymax {
                    let (cx, cy) = b.center();
                    gt_ids[y * W + x] = k as u32 + 1;
                    // Slightly noisy centre votes.
                    offsets[y * W + x] = [cx - px + 0.3 * ((x * 7 + y) % 3) as f64 - 0.3, cy - py];
                    break;
                }
            }
        }
    }
    let semantic = ClassMap {
        width: W,
        height: H,
        classes: gt_ids.iter().map(|&i| usize::from(i > 0)).collect(),
    };
    let offsets = OffsetMap {
        width: W,
        height: H,
        offsets,
    };
    let boxes: Vec<BoxDetection> = truth
        .iter()
        .map(|&bbox| BoxDetection {
            bbox,
            class: 1,
            confidence: 0.9,
        })
        .collect();
    let pred = assemble_instances(&semantic, &offsets, &boxes).expect("consistent shapes");
    for y in 0..H {
        let row: String = (0..W)
            .map(|x| match pred.ids[y * W + x] {
                0 => '.',
                i => char::from(b'0' + i as u8),
            })
            .collect();
        println!("{row}");
    }
    let gt = InstanceMap {
        width: W,
        height: H,
        ids: gt_ids,
    };
    println!("instance mIoU {:.3}", miou_by_instance(&pred, &gt).unwrap());
}
