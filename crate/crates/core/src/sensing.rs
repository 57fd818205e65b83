//! Simulated perception inputs: the lidar, a pinhole-style camera strip model
//! for silhouettes, and the fixed-length histories the policy consumes.
//!
//! The camera treats every body as a vertical prism. Walls are taller than
//! the camera; pedestrians share one height, so a nearer pedestrian's
//! silhouette always covers a farther one's rows and occlusion can be
//! resolved column by column.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::{ray_circle, ray_segment, segment_hits_circle, Segment, Vec2};
use crate::world::{HumanAgent, Pose2D, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub beams: usize,
    /// Total angular coverage, radians, centred on the heading.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beams: 180,
            fov: 240f64.to_radians(),
            max_range: 6.0,
        }
    }
}

impl LidarConfig {
    /// Beam angles relative to the heading, evenly spaced with both ends of
    /// the field of view included.
    pub fn beam_angles(&self) -> Vec<f64> {
        if self.beams <= 1 {
            return vec![0.0; self.beams];
        }
        let step = self.fov / (self.beams - 1) as f64;
        (0..self.beams)
            .map(|i| -self.fov / 2.0 + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub beam_angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
    pub tick: u64,
}

/// Nearest body along `dir` from `origin`, considering walls and every human
/// except `skip`.
fn nearest_hit(
    origin: Vec2,
    dir: Vec2,
    walls: &[Segment],
    humans: &[HumanAgent],
    skip: Option<u32>,
) -> f64 {
    let mut best = f64::INFINITY;
    for w in walls {
        if let Some(t) = ray_segment(origin, dir, w) {
            best = best.min(t);
        }
    }
    for h in humans {
        if Some(h.id) == skip {
            continue;
        }
        if let Some(t) = ray_circle(origin, dir, h.position(), h.body_radius) {
            best = best.min(t);
        }
    }
    best
}

pub fn raycast_lidar(world: &WorldState, pose: &Pose2D, cfg: &LidarConfig) -> LidarScan {
    let origin = pose.position();
    let beam_angles = cfg.beam_angles();
    let ranges = beam_angles
        .iter()
        .map(|&a| {
            let dir = Vec2::from_angle(pose.theta + a);
            nearest_hit(origin, dir, &world.walls, &world.humans, None)
                .min(cfg.max_range)
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    LidarScan {
        beam_angles,
        ranges,
        max_range: cfg.max_range,
        tick: world.tick,
    }
}

/// The three most recent scans, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarStack {
    scans: VecDeque<LidarScan>,
}

impl LidarStack {
    pub const DEPTH: usize = 3;

    /// Starts a stack by repeating the first scan.
    pub fn new(first: LidarScan) -> Self {
        Self {
            scans: std::iter::repeat_n(first, Self::DEPTH).collect(),
        }
    }

    pub fn push(&mut self, scan: LidarScan) {
        self.scans.pop_front();
        self.scans.push_back(scan);
    }

    pub fn scans(&self) -> impl Iterator<Item = &LidarScan> {
        self.scans.iter()
    }

    pub fn beams(&self) -> usize {
        self.scans[0].ranges.len()
    }

    /// Ranges scaled to [0, 1], `3 × beams`, oldest row first.
    pub fn normalized(&self) -> Vec<f64> {
        self.scans
            .iter()
            .flat_map(|s| s.ranges.iter().map(move |r| r / s.max_range))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Horizontal field of view, radians.
    pub fov: f64,
    /// Vertical field of view, radians.
    pub vertical_fov: f64,
    pub range: f64,
    pub camera_height: f64,
    pub human_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov: PI / 2.0,
            vertical_fov: PI / 2.0,
            range: 8.0,
            camera_height: 1.0,
            human_height: 1.7,
        }
    }
}

impl CameraConfig {
    pub fn column_bearing(&self, col: usize, resolution: usize) -> f64 {
        self.fov / 2.0 - self.fov * (col as f64 + 0.5) / resolution as f64
    }

    pub fn row_elevation(&self, row: usize, resolution: usize) -> f64 {
        self.vertical_fov / 2.0 - self.vertical_fov * (row as f64 + 0.5) / resolution as f64
    }

    pub fn in_view(&self, pose: &Pose2D, p: Vec2) -> bool {
        let (range, bearing) = pose.polar_to(p);
        range <= self.range && bearing.abs() <= self.fov / 2.0
    }
}

pub const DEFAULT_MASK_RESOLUTION: usize = 244;

/// Binary silhouette of one pedestrian in the camera viewport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub human_id: u32,
    pub tick: u64,
}

impl SegMask {
    pub fn empty(resolution: usize, human_id: u32, tick: u64) -> Self {
        Self {
            width: resolution,
            height: resolution,
            values: vec![0; resolution * resolution],
            human_id,
            tick,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Column/row extent of the set pixels, `(xmin, ymin, xmax, ymax)` with
    /// exclusive upper bounds.
    pub fn extent(&self) -> Option<(usize, usize, usize, usize)> {
        let mut ext: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) != 0 {
                    ext = Some(match ext {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        ext
    }

    /// Plain (P2) greymap for debugging.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "P2\n{} {}\n1", self.width, self.height)?;
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Writes a scan as `beam,angle,range` rows.
pub fn write_scan_csv<W: Write>(scan: &LidarScan, out: &mut W) -> io::Result<()> {
    writeln!(out, "beam,angle,range")?;
    for (i, (a, r)) in scan.beam_angles.iter().zip(&scan.ranges).enumerate() {
        writeln!(out, "{i},{a},{r}")?;
    }
    Ok(())
}

/// Rasterizes the pedestrian into a square viewport. With `modal` set, the
/// columns hidden behind walls or nearer pedestrians stay empty; otherwise
/// occluders are ignored and the full silhouette is drawn.
pub fn render_silhouette(
    human: &HumanAgent,
    pose: &Pose2D,
    world: &WorldState,
    camera: &CameraConfig,
    resolution: usize,
    modal: bool,
) -> SegMask {
    let mut mask = SegMask::empty(resolution, human.id, world.tick);
    let origin = pose.position();
    for col in 0..resolution {
        let dir = Vec2::from_angle(pose.theta + camera.column_bearing(col, resolution));
        let Some(t) = ray_circle(origin, dir, human.position(), human.body_radius) else {
            continue;
        };
        if t > camera.range {
            continue;
        }
        if modal && nearest_hit(origin, dir, &world.walls, &world.humans, Some(human.id)) < t {
            continue;
        }
        let top = (camera.human_height - camera.camera_height).atan2(t);
        let bottom = (-camera.camera_height).atan2(t);
        for row in 0..resolution {
            let e = camera.row_elevation(row, resolution);
            if e <= top && e >= bottom {
                mask.values[row * resolution + col] = 1;
            }
        }
    }
    mask
}

/// Visible-portion silhouette.
pub fn render_mask(
    human: &HumanAgent,
    pose: &Pose2D,
    world: &WorldState,
    camera: &CameraConfig,
    resolution: usize,
) -> SegMask {
    render_silhouette(human, pose, world, camera, resolution, true)
}

/// Full silhouette with occluders ignored.
pub fn render_amodal_mask(
    human: &HumanAgent,
    pose: &Pose2D,
    world: &WorldState,
    camera: &CameraConfig,
    resolution: usize,
) -> SegMask {
    render_silhouette(human, pose, world, camera, resolution, false)
}

/// Sample points on the disc: half on the rim, half on a ring at half the
/// radius, both at half-step angular offsets.
pub fn disc_samples(center: Vec2, radius: f64, samples: usize) -> Vec<Vec2> {
    let outer = samples / 2;
    let inner = samples - outer;
    let ring = |n: usize, r: f64| {
        (0..n).map(move |j| center + Vec2::from_angle(2.0 * PI * (j as f64 + 0.5) / n as f64) * r)
    };
    ring(outer, radius)
        .chain(ring(inner, radius * 0.5))
        .collect()
}

/// Fraction of sample points on the pedestrian's disc that the camera can
/// see: inside the view cone and range, and not hidden by a wall or another
/// pedestrian.
pub fn visible_fraction(
    human: &HumanAgent,
    pose: &Pose2D,
    world: &WorldState,
    camera: &CameraConfig,
    samples: usize,
) -> f64 {
    let samples = samples.max(8);
    let origin = pose.position();
    let points = disc_samples(human.position(), human.body_radius, samples);
    let visible = points
        .iter()
        .filter(|&&p| {
            if !camera.in_view(pose, p) {
                return false;
            }
            let sight = Segment::new(origin, p);
            !world.walls.iter().any(|w| sight.intersects(w))
                && !world.humans.iter().any(|h| {
                    h.id != human.id && segment_hits_circle(origin, p, h.position(), h.body_radius)
                })
        })
        .count();
    visible as f64 / points.len() as f64
}

/// Fixed-length silhouette history for one tracked pedestrian, zero-padded
/// at the old end until filled.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMaskStack {
    resolution: usize,
    history: usize,
    masks: VecDeque<SegMask>,
}

impl SegMaskStack {
    pub const DEFAULT_HISTORY: usize = 3;

    pub fn new(resolution: usize, history: usize) -> Self {
        Self {
            resolution,
            history,
            masks: VecDeque::with_capacity(history),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn push(&mut self, mask: SegMask) {
        debug_assert_eq!(mask.width, self.resolution);
        if self.masks.len() == self.history {
            self.masks.pop_front();
        }
        self.masks.push_back(mask);
    }

    /// `history × resolution × resolution` channels, oldest first.
    pub fn to_channels(&self) -> Vec<f64> {
        let plane = self.resolution * self.resolution;
        let mut out = vec![0.0; self.history * plane];
        let offset = self.history - self.masks.len();
        for (k, m) in self.masks.iter().enumerate() {
            let dst = &mut out[(offset + k) * plane..(offset + k + 1) * plane];
            for (d, &v) in dst.iter_mut().zip(&m.values) {
                *d = f64::from(v);
            }
        }
        out
    }
}
