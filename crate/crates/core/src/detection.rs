//! Synthetic amodal detector and a greedy nearest-neighbour tracker.
//!
//! The detector has no learned component. Its confidence for a pedestrian
//! rises with the visible fraction of the body and falls with range, so
//! moving to a clearer, closer viewpoint is the only way to raise it.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::percept::BBox;
use crate::sensing::{visible_fraction, CameraConfig};
use crate::world::{HumanAgent, Pose2D, WorldState};

/// Maps detection confidence to the probability that the predicted class is
/// forced to the true class: `confidence^exponent`. When not forced, the
/// class is drawn uniformly from the whole class set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipCurve {
    pub exponent: f64,
}

impl Default for FlipCurve {
    fn default() -> Self {
        Self { exponent: 1.0 }
    }
}

impl FlipCurve {
    pub fn keep_probability(&self, confidence: f64) -> f64 {
        confidence.clamp(0.0, 1.0).powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub c_min: f64,
    pub c_max: f64,
    /// Range at which the proximity factor reaches zero.
    pub d_max: f64,
    pub noise_sigma: f64,
    /// Weak-detection threshold.
    pub lambda: f64,
    pub class_flip_curve: FlipCurve,
    pub visibility_samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            c_min: 0.2,
            c_max: 1.0,
            d_max: 8.0,
            noise_sigma: 0.0,
            lambda: 0.6,
            class_flip_curve: FlipCurve::default(),
            visibility_samples: 32,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.c_min && self.c_min < self.c_max && self.c_max <= 1.0) {
            return Err(format!(
                "need 0 <= c_min < c_max <= 1, got {} / {}",
                self.c_min, self.c_max
            ));
        }
        if !(self.d_max > 0.0) {
            return Err("d_max must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err("noise_sigma must be non-negative".into());
        }
        Ok(())
    }

    /// Noise-free confidence.
    pub fn mean_confidence(&self, visible_frac: f64, distance: f64) -> f64 {
        let proximity = (1.0 - distance / self.d_max).max(0.0);
        self.c_min + (self.c_max - self.c_min) * visible_frac.clamp(0.0, 1.0) * proximity
    }
}

/// Confidence for one pedestrian, or `None` when nothing of it is visible.
pub fn confidence_model<R: Rng + ?Sized>(
    visible_frac: f64,
    distance: f64,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Option<f64> {
    if visible_frac <= 0.0 {
        return None;
    }
    let mut c = cfg.mean_confidence(visible_frac, distance);
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        c += noise.sample(rng);
    }
    Some(c.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Ground-truth identity. Used for scoring and silhouette lookup only.
    pub human_id: u32,
    pub confidence: f64,
    pub predicted_class: usize,
    /// Amodal box in viewport pixels.
    pub bbox: BBox,
    pub visible_frac: f64,
    pub tick: u64,
    pub distance: f64,
    /// Estimated world-frame position of the body centre.
    pub position: Vec2,
}

/// Amodal box of a pedestrian projected into a square viewport of
/// `resolution` pixels.
pub fn project_bbox(
    human: &HumanAgent,
    pose: &Pose2D,
    camera: &CameraConfig,
    resolution: usize,
) -> BBox {
    let res = resolution as f64;
    let (d, bearing) = pose.polar_to(human.position());
    let r = human.body_radius;
    let half = if d > r {
        (r / d).asin()
    } else {
        std::f64::consts::FRAC_PI_2
    };
    let near = (d - r).max(1e-3);
    let col = |b: f64| ((camera.fov / 2.0 - b) / camera.fov * res).clamp(0.0, res);
    let row =
        |e: f64| ((camera.vertical_fov / 2.0 - e) / camera.vertical_fov * res).clamp(0.0, res);
    let (mut xmin, mut xmax) = (col(bearing + half), col(bearing - half));
    let (mut ymin, mut ymax) = (
        row((camera.human_height - camera.camera_height).atan2(near)),
        row((-camera.camera_height).atan2(near)),
    );
    // Keep at least one pixel so the box stays well formed after clipping.
    if xmax - xmin < 1.0 {
        if xmin + 1.0 <= res {
            xmax = xmin + 1.0
        } else {
            xmin = xmax - 1.0
        }
    }
    if ymax - ymin < 1.0 {
        if ymin + 1.0 <= res {
            ymax = ymin + 1.0
        } else {
            ymin = ymax - 1.0
        }
    }
    BBox {
        xmin,
        ymin,
        xmax,
        ymax,
    }
}

/// Viewport resolution used for detection boxes.
pub const DETECTION_VIEWPORT: usize = 244;

/// One record per pedestrian with any visible part, in id order. Each
/// pedestrian consumes a fixed number of draws from `rng`, visible or not.
pub fn detect<R: Rng + ?Sized>(
    world: &WorldState,
    pose: &Pose2D,
    camera: &CameraConfig,
    cfg: &OracleConfig,
    class_count: usize,
    rng: &mut R,
) -> Vec<DetectionRecord> {
    let noise =
        (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma"));
    let mut out = Vec::new();
    for h in &world.humans {
        let eps = noise.map_or(0.0, |n| n.sample(rng));
        let u: f64 = rng.random();
        let fallback = rng.random_range(0..class_count.max(1));

        let vis = visible_fraction(h, pose, world, camera, cfg.visibility_samples);
        if vis <= 0.0 {
            continue;
        }
        let distance = pose.position().distance(h.position());
        let confidence = (cfg.mean_confidence(vis, distance) + eps).clamp(0.0, 1.0);
        let predicted_class = if u < cfg.class_flip_curve.keep_probability(confidence) {
            h.true_class
        } else {
            fallback
        };
        out.push(DetectionRecord {
            human_id: h.id,
            confidence,
            predicted_class,
            bbox: project_bbox(h, pose, camera, DETECTION_VIEWPORT),
            visible_frac: vis,
            tick: world.tick,
            distance,
            position: h.position(),
        });
    }
    out
}

/// Writes one JSON object per line with keys `human_id`, `confidence`,
/// `predicted_class`, `bbox`, `visible_frac`, `tick`, `distance`, `position`.
pub fn write_detections_jsonl<W: Write>(
    records: &[DetectionRecord],
    out: &mut W,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub history: Vec<DetectionRecord>,
    pub est_pose: Pose2D,
    pub age: u64,
    pub misses: u64,
    /// Ground-truth pedestrian of the detection that started the track.
    pub birth_human: u32,
}

impl Track {
    pub const MAX_HISTORY: usize = 32;

    pub fn latest(&self) -> &DetectionRecord {
        self.history
            .last()
            .expect("tracks are born with a detection")
    }

    pub fn confidence(&self) -> f64 {
        self.latest().confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub gating_radius: f64,
    pub max_misses: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gating_radius: 1.0,
            max_misses: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    born_humans: Vec<(u64, u32)>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
            born_humans: Vec::new(),
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, track_id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    /// Greedy association: candidate pairs inside the gate are taken in order
    /// of increasing distance. Returns the track id given to each detection.
    pub fn update(&mut self, detections: &[DetectionRecord]) -> Vec<u64> {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (di, d) in detections.iter().enumerate() {
                let dist = t.est_pose.position().distance(d.position);
                if dist <= self.config.gating_radius {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; self.tracks.len()];
        let mut det_track: Vec<Option<u64>> = vec![None; detections.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_track[di].is_some() {
                continue;
            }
            track_used[ti] = true;
            let t = &mut self.tracks[ti];
            let d = &detections[di];
            let prev = t.est_pose.position();
            let heading = if prev.distance(d.position) > 1e-9 {
                (d.position - prev).angle()
            } else {
                t.est_pose.theta
            };
            t.est_pose = Pose2D::new(d.position.x, d.position.y, heading);
            t.history.push(d.clone());
            if t.history.len() > Track::MAX_HISTORY {
                t.history.remove(0);
            }
            t.misses = 0;
            det_track[di] = Some(t.track_id);
        }
        for (t, used) in self.tracks.iter_mut().zip(&track_used) {
            t.age += 1;
            if !used {
                t.misses += 1;
            }
        }
        let max_misses = self.config.max_misses;
        self.tracks.retain(|t| t.misses < max_misses);

        for (di, d) in detections.iter().enumerate() {
            if det_track[di].is_none() {
                let id = self.next_id;
                self.next_id += 1;
                self.born_humans.push((id, d.human_id));
                self.tracks.push(Track {
                    track_id: id,
                    history: vec![d.clone()],
                    est_pose: Pose2D::new(d.position.x, d.position.y, 0.0),
                    age: 0,
                    misses: 0,
                    birth_human: d.human_id,
                });
                det_track[di] = Some(id);
            }
        }
        det_track
            .into_iter()
            .map(|t| t.expect("every detection gets a track"))
            .collect()
    }

    /// Ground-truth pedestrian at the birth of any track ever created.
    pub fn birth_human(&self, track_id: u64) -> Option<u32> {
        self.born_humans
            .iter()
            .find(|(id, _)| *id == track_id)
            .map(|&(_, h)| h)
    }
}

/// Functional form of [`Tracker::update`] with an explicit gate.
pub fn update_tracks(
    tracker: &mut Tracker,
    detections: &[DetectionRecord],
    gating_radius: f64,
) -> Vec<u64> {
    tracker.config.gating_radius = gating_radius;
    tracker.update(detections)
}

/// The weakest track below `lambda`, lowest id on ties.
pub fn select_target(tracks: &[Track], lambda: f64) -> Option<u64> {
    tracks
        .iter()
        .filter(|t| t.confidence() < lambda)
        .min_by(|a, b| {
            a.confidence()
                .total_cmp(&b.confidence())
                .then(a.track_id.cmp(&b.track_id))
        })
        .map(|t| t.track_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;
    use crate::world::RobotState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(human_id: u32, x: f64, y: f64, confidence: f64) -> DetectionRecord {
        DetectionRecord {
            human_id,
            confidence,
            predicted_class: 0,
            bbox: BBox {
                xmin: 0.0,
                ymin: 0.0,
                xmax: 1.0,
                ymax: 1.0,
            },
            visible_frac: 1.0,
            tick: 0,
            distance: 1.0,
            position: Vec2::new(x, y),
        }
    }

    fn quiet() -> OracleConfig {
        OracleConfig {
            noise_sigma: 0.0,
            ..OracleConfig::default()
        }
    }

    fn human(id: u32, x: f64, y: f64, class: usize) -> HumanAgent {
        HumanAgent {
            id,
            pose: Pose2D::new(x, y, 0.0),
            body_radius: 0.3,
            speed: 0.0,
            waypoints: vec![],
            true_class: class,
            next_waypoint: 0,
        }
    }

    fn world(humans: Vec<HumanAgent>, walls: Vec<Segment>) -> WorldState {
        WorldState {
            tick: 0,
            dt: 0.1,
            robot: RobotState::new(Pose2D::new(0.0, 0.0, 0.0), 0.3),
            humans,
            walls,
        }
    }

    #[test]
    fn confidence_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = quiet();
        assert_eq!(confidence_model(1.0, 0.0, &cfg, &mut rng), Some(cfg.c_max));
        assert_eq!(confidence_model(0.0, 1.0, &cfg, &mut rng), None);
        let cfg = OracleConfig {
            c_min: 0.2,
            c_max: 1.0,
            d_max: 8.0,
            ..quiet()
        };
        let c = confidence_model(0.5, 4.0, &cfg, &mut rng).unwrap();
        assert!((c - 0.4).abs() < 1e-12);
    }

    #[test]
    fn confidence_is_monotone_without_noise() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..=10 {
            for j in 0..=10 {
                let (v, d) = (0.05 + i as f64 * 0.095, j as f64);
                let c = confidence_model(v, d, &cfg, &mut rng).unwrap();
                let more_visible =
                    confidence_model((v + 0.05).min(1.0), d, &cfg, &mut rng).unwrap();
                let farther = confidence_model(v, d + 0.5, &cfg, &mut rng).unwrap();
                assert!(more_visible >= c && farther <= c);
            }
        }
    }

    #[test]
    fn nobody_in_view_gives_no_detections() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = world(vec![human(0, -3.0, 0.0, 0)], vec![]);
        assert!(detect(
            &w,
            &Pose2D::new(0.0, 0.0, 0.0),
            &CameraConfig::default(),
            &quiet(),
            2,
            &mut rng
        )
        .is_empty());
    }

    #[test]
    fn full_confidence_never_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = OracleConfig {
            c_min: 1.0,
            c_max: 1.0,
            ..quiet()
        };
        let w = world(vec![human(0, 2.0, 0.0, 1)], vec![]);
        for _ in 0..500 {
            let d = detect(
                &w,
                &Pose2D::new(0.0, 0.0, 0.0),
                &CameraConfig::default(),
                &cfg,
                2,
                &mut rng,
            );
            assert_eq!(d[0].confidence, 1.0);
            assert_eq!(d[0].predicted_class, 1);
        }
    }

    #[test]
    fn half_confidence_two_classes_is_right_three_quarters_of_the_time() {
        // c_min = c_max = 0.5 fixes the confidence at one half.
        let cfg = OracleConfig {
            c_min: 0.5,
            c_max: 0.5 + 1e-12,
            ..quiet()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = world(vec![human(0, 2.0, 0.0, 0)], vec![]);
        let n = 10_000;
        let correct = (0..n)
            .filter(|_| {
                detect(
                    &w,
                    &Pose2D::new(0.0, 0.0, 0.0),
                    &CameraConfig::default(),
                    &cfg,
                    2,
                    &mut rng,
                )[0]
                .predicted_class
                    == 0
            })
            .count();
        let rate = correct as f64 / n as f64;
        assert!((rate - 0.75).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn detect_is_idempotent_without_noise() {
        let w = world(vec![human(0, 2.0, 0.5, 0), human(1, 4.0, -0.5, 1)], vec![]);
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let a = detect(
            &w,
            &pose,
            &CameraConfig::default(),
            &quiet(),
            2,
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let b = detect(
            &w,
            &pose,
            &CameraConfig::default(),
            &quiet(),
            2,
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.bbox.is_well_formed()));
    }

    #[test]
    fn target_selection() {
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.update(&[record(0, 0.0, 0.0, 0.9), record(1, 5.0, 0.0, 0.8)]);
        assert_eq!(select_target(tracker.tracks(), 0.6), None);

        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.update(&[record(0, 0.0, 0.0, 0.3)]);
        assert_eq!(select_target(tracker.tracks(), 0.6), Some(0));

        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.update(&[
            record(0, 0.0, 0.0, 0.5),
            record(1, 5.0, 0.0, 0.3),
            record(2, 9.0, 0.0, 0.3),
        ]);
        assert_eq!(select_target(tracker.tracks(), 0.6), Some(1));
    }

    #[test]
    fn association_and_spawning() {
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.update(&[record(0, 0.0, 0.0, 0.5)]);
        let ids = update_tracks(&mut tracker, &[record(0, 0.1, 0.0, 0.5)], 1.0);
        assert_eq!(ids, vec![0]);
        let ids = update_tracks(&mut tracker, &[record(0, 2.1, 0.0, 0.5)], 1.0);
        assert_eq!(ids, vec![1]);
        assert_eq!(tracker.tracks().len(), 2);
    }

    #[test]
    fn greedy_takes_globally_nearest_pair_first() {
        let mut tracker = Tracker::new(TrackerConfig {
            gating_radius: 2.0,
            max_misses: 10,
        });
        tracker.update(&[record(0, 0.0, 0.0, 0.5), record(1, 1.0, 0.0, 0.5)]);
        // det A at 0.9 is 0.1 from track 1 and 0.9 from track 0;
        // det B at 0.35 is 0.35 from track 0 and 0.65 from track 1.
        let ids = tracker.update(&[record(1, 0.9, 0.0, 0.5), record(0, 0.35, 0.0, 0.5)]);
        assert_eq!(ids, vec![1, 0]);
    }

    #[test]
    fn tracks_retire_and_ids_are_not_reused() {
        let mut tracker = Tracker::new(TrackerConfig {
            gating_radius: 1.0,
            max_misses: 3,
        });
        tracker.update(&[record(0, 0.0, 0.0, 0.5)]);
        for _ in 0..3 {
            tracker.update(&[]);
        }
        assert!(tracker.tracks().is_empty());
        let ids = tracker.update(&[record(0, 0.0, 0.0, 0.5)]);
        assert_eq!(ids, vec![1]);
        assert_eq!(tracker.birth_human(0), Some(0));
        assert!(tracker.tracks().iter().all(|t| t.misses <= 3));
    }

    #[test]
    fn jsonl_has_one_line_per_record() {
        let mut buf = Vec::new();
        write_detections_jsonl(
            &[record(0, 0.0, 0.0, 0.5), record(1, 1.0, 0.0, 0.4)],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["human_id"], 1);
        assert_eq!(v["confidence"], 0.4);
    }
}
