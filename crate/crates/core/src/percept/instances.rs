use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BBox, PerceptError};

/// Class index 0 is background.
pub const BACKGROUND_CLASS: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<usize>,
}

/// Per-pixel vector from the pixel centre to its predicted object centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetMap {
    pub width: usize,
    pub height: usize,
    pub offsets: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDetection {
    pub bbox: BBox,
    pub class: usize,
    pub confidence: f64,
}

/// Per-pixel instance ids: 0 for background, `k + 1` for box `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
}

impl InstanceMap {
    pub fn count(&self, id: u32) -> usize {
        self.ids.iter().filter(|&&i| i == id).count()
    }

    /// Binary mask of one instance.
    pub fn mask(&self, id: u32) -> Vec<u8> {
        self.ids.iter().map(|&i| u8::from(i == id)).collect()
    }
}

/// Every foreground pixel votes for `pixel + offset`; the pixel joins the box
/// of its own class whose centre is nearest to that vote.
pub fn assemble_instances(
    semantic: &ClassMap,
    offsets: &OffsetMap,
    boxes: &[BoxDetection],
) -> Result<InstanceMap, PerceptError> {
    let (w, h) = (semantic.width, semantic.height);
    if offsets.width != w
        || offsets.height != h
        || semantic.classes.len() != w * h
        || offsets.offsets.len() != w * h
    {
        return Err(PerceptError::Shape(format!(
            "class map {}x{} ({} px) vs offset map {}x{} ({} px)",
            w,
            h,
            semantic.classes.len(),
            offsets.width,
            offsets.height,
            offsets.offsets.len()
        )));
    }
    let centers: Vec<(f64, f64)> = boxes.iter().map(|b| b.bbox.center()).collect();
    let mut ids = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let class = semantic.classes[i];
            if class == BACKGROUND_CLASS {
                continue;
            }
            let [ox, oy] = offsets.offsets[i];
            let vote = (x as f64 + 0.5 + ox, y as f64 + 0.5 + oy);
            let mut best: Option<(usize, f64)> = None;
            for (k, (b, c)) in boxes.iter().zip(&centers).enumerate() {
                if b.class != class {
                    continue;
                }
                let d = (vote.0 - c.0).powi(2) + (vote.1 - c.1).powi(2);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            if let Some((k, _)) = best {
                ids[i] = k as u32 + 1;
            }
        }
    }
    Ok(InstanceMap {
        width: w,
        height: h,
        ids,
    })
}

/// Intersection over union of two binary masks; two empty masks score 1.
pub fn iou(a: &[u8], b: &[u8]) -> Result<f64, PerceptError> {
    if a.len() != b.len() {
        return Err(PerceptError::Shape(format!(
            "mask sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean IoU over index-paired masks.
pub fn miou<A: AsRef<[u8]>, B: AsRef<[u8]>>(pred: &[A], gt: &[B]) -> Result<f64, PerceptError> {
    if pred.len() != gt.len() {
        return Err(PerceptError::Shape(format!(
            "{} predicted vs {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(PerceptError::Shape("no mask pairs".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += iou(p.as_ref(), g.as_ref())?;
    }
    Ok(total / pred.len() as f64)
}

/// Mean IoU over every non-background id present in either map.
pub fn miou_by_instance(pred: &InstanceMap, gt: &InstanceMap) -> Result<f64, PerceptError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(PerceptError::Shape("instance maps differ in size".into()));
    }
    let ids: BTreeSet<u32> = pred
        .ids
        .iter()
        .chain(&gt.ids)
        .copied()
        .filter(|&i| i != 0)
        .collect();
    if ids.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for &id in &ids {
        total += iou(&pred.mask(id), &gt.mask(id))?;
    }
    Ok(total / ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(w: usize, x0: usize, y0: usize, side: usize) -> Vec<u8> {
        let mut m = vec![0; w * w];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                m[y * w + x] = 1;
            }
        }
        m
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, class: usize) -> BoxDetection {
        BoxDetection {
            bbox: BBox::new(x0, y0, x1, y1).unwrap(),
            class,
            confidence: 0.9,
        }
    }

    #[test]
    fn every_foreground_pixel_follows_its_vote() {
        let (w, h) = (8, 6);
        let center = (4.0, 3.0);
        let classes = vec![1; w * h];
        let offsets = (0..w * h)
            .map(|i| {
                [
                    center.0 - ((i % w) as f64 + 0.5),
                    center.1 - ((i / w) as f64 + 0.5),
                ]
            })
            .collect();
        let map = assemble_instances(
            &ClassMap {
                width: w,
                height: h,
                classes,
            },
            &OffsetMap {
                width: w,
                height: h,
                offsets,
            },
            &[det(2.0, 1.0, 6.0, 5.0, 1)],
        )
        .unwrap();
        assert!(map.ids.iter().all(|&i| i == 1));
    }

    #[test]
    fn background_pixels_stay_zero() {
        let map = assemble_instances(
            &ClassMap {
                width: 2,
                height: 1,
                classes: vec![0, 1],
            },
            &OffsetMap {
                width: 2,
                height: 1,
                offsets: vec![[0.0, 0.0]; 2],
            },
            &[det(0.0, 0.0, 2.0, 1.0, 1)],
        )
        .unwrap();
        assert_eq!(map.ids, vec![0, 1]);
    }

    #[test]
    fn split_votes_form_two_instances() {
        // Boxes centred at x = 25 and x = 75 on a 100x10 strip; the left
        // 40 columns point at the first centre, the rest at the second.
        let (w, h) = (100, 10);
        let boxes = [det(15.0, 0.0, 35.0, 10.0, 1), det(65.0, 0.0, 85.0, 10.0, 1)];
        let mut offsets = Vec::with_capacity(w * h);
        let mut expected = [0usize; 2];
        for y in 0..h {
            for x in 0..w {
                let target = if x < 40 { 0 } else { 1 };
                expected[target] += 1;
                let c = boxes[target].bbox.center();
                offsets.push([c.0 - (x as f64 + 0.5), c.1 - (y as f64 + 0.5)]);
            }
        }
        let map = assemble_instances(
            &ClassMap {
                width: w,
                height: h,
                classes: vec![1; w * h],
            },
            &OffsetMap {
                width: w,
                height: h,
                offsets,
            },
            &boxes,
        )
        .unwrap();
        assert_eq!(map.count(1), expected[0]);
        assert_eq!(map.count(2), expected[1]);
        assert_eq!((expected[0], expected[1]), (400, 600));
    }

    #[test]
    fn class_mismatch_leaves_pixel_unassigned() {
        let map = assemble_instances(
            &ClassMap {
                width: 1,
                height: 1,
                classes: vec![2],
            },
            &OffsetMap {
                width: 1,
                height: 1,
                offsets: vec![[0.0, 0.0]],
            },
            &[det(0.0, 0.0, 1.0, 1.0, 1)],
        )
        .unwrap();
        assert_eq!(map.ids, vec![0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let r = assemble_instances(
            &ClassMap {
                width: 2,
                height: 2,
                classes: vec![1; 4],
            },
            &OffsetMap {
                width: 2,
                height: 1,
                offsets: vec![[0.0, 0.0]; 2],
            },
            &[],
        );
        assert!(matches!(r, Err(PerceptError::Shape(_))));
    }

    #[test]
    fn iou_fixtures() {
        let a = square(20, 2, 2, 10);
        assert_eq!(miou(&[&a], &[&a]).unwrap(), 1.0);
        let far = square(20, 12, 12, 5);
        assert_eq!(miou(&[&a], &[&far]).unwrap(), 0.0);
        let shifted = square(20, 7, 2, 10);
        assert_eq!(iou(&a, &shifted).unwrap(), 1.0 / 3.0);
        assert_eq!(iou(&[0, 0], &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn iou_by_instance_id() {
        let pred = InstanceMap {
            width: 4,
            height: 1,
            ids: vec![1, 1, 2, 0],
        };
        let gt = InstanceMap {
            width: 4,
            height: 1,
            ids: vec![1, 1, 2, 2],
        };
        assert!((miou_by_instance(&pred, &gt).unwrap() - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ids_are_background_or_box_indices(
            classes in prop::collection::vec(0usize..3, 36),
            offs in prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0), 36),
            nboxes in 0usize..4,
        ) {
            let boxes: Vec<BoxDetection> = (0..nboxes)
                .map(|k| det(k as f64, k as f64, k as f64 + 2.0, k as f64 + 3.0, 1 + k % 2))
                .collect();
            let map = assemble_instances(
                &ClassMap { width: 6, height: 6, classes },
                &OffsetMap { width: 6, height: 6, offsets: offs.iter().map(|&(a, b)| [a, b]).collect() },
                &boxes,
            ).unwrap();
            prop_assert!(map.ids.iter().all(|&i| (i as usize) <= nboxes));
        }
    }
}
