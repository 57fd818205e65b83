//! Table metrics computed purely from episode logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::env::EpisodeLog;

/// A horizon label and the number of ticks it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub label: u32,
    pub ticks: u64,
}

/// Labels 80/160/320 mapped to 8/16/32 ticks.
pub fn default_horizons() -> Vec<Horizon> {
    vec![
        Horizon {
            label: 80,
            ticks: 8,
        },
        Horizon {
            label: 160,
            ticks: 16,
        },
        Horizon {
            label: 320,
            ticks: 32,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_cls: f64,
    pub miou: f64,
    pub acc_tr: f64,
    /// Pursued-target classification correctness keyed by horizon label.
    pub delta_acc: BTreeMap<u32, f64>,
    pub episodes: usize,
    /// Episodes in which a pursuit target was ever locked.
    pub pursuits: usize,
    pub collision_rate: f64,
    pub mean_return: f64,
    pub seeds: Vec<u64>,
}

impl MetricsReport {
    pub fn fractions_in_unit_interval(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        unit(self.acc_cls)
            && unit(self.miou)
            && unit(self.acc_tr)
            && unit(self.collision_rate)
            && self.delta_acc.values().all(|&v| unit(v))
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Correctness of the pursued target's class `tau` ticks after pursuit
/// began, judged on the latest sighting of the target within that window.
/// Episodes that end early are judged at their final tick.
pub fn pursuit_correct(log: &EpisodeLog, tau: u64) -> Option<f64> {
    let (t0, human) = log.pursuit_start()?;
    let end = (t0 + tau).min(log.ticks.len() as u64);
    let hit = (t0..=end)
        .rev()
        .find_map(|t| {
            log.detections_at(t)
                .and_then(|dets| dets.iter().find(|d| d.human_id == human))
        })
        .is_some_and(|d| d.predicted_class == d.true_class);
    Some(if hit { 1.0 } else { 0.0 })
}

pub fn compute_metrics(logs: &[EpisodeLog], horizons: &[Horizon]) -> MetricsReport {
    let (mut cls_ok, mut cls_n, mut iou_sum) = (0usize, 0usize, 0.0);
    let (mut tr_ok, mut tr_n) = (0usize, 0usize);
    for log in logs {
        for f in &log.first_detections {
            cls_n += 1;
            cls_ok += usize::from(f.predicted_class == f.true_class);
            iou_sum += f.mask_iou;
        }
        let all = log
            .initial_detections
            .iter()
            .chain(log.ticks.iter().flat_map(|t| t.detections.iter()));
        for d in all {
            tr_n += 1;
            tr_ok += usize::from(d.track_birth_human == d.human_id);
        }
    }
    let mut delta_acc = BTreeMap::new();
    let mut pursuits = 0;
    for h in horizons {
        let scores: Vec<f64> = logs
            .iter()
            .filter_map(|l| pursuit_correct(l, h.ticks))
            .collect();
        pursuits = scores.len();
        delta_acc.insert(h.label, mean(scores.iter().sum(), scores.len()));
    }
    let mut seeds: Vec<u64> = logs.iter().map(|l| l.scenario_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    MetricsReport {
        acc_cls: mean(cls_ok as f64, cls_n),
        miou: mean(iou_sum, cls_n),
        acc_tr: mean(tr_ok as f64, tr_n),
        delta_acc,
        episodes: logs.len(),
        pursuits,
        collision_rate: mean(
            logs.iter().filter(|l| l.collided()).count() as f64,
            logs.len(),
        ),
        mean_return: mean(logs.iter().map(EpisodeLog::total_reward).sum(), logs.len()),
        seeds,
    }
}
