//! Per-tick pursuit reward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub r_collision: f64,
    pub w_w: f64,
    pub w_abs_threshold: f64,
    pub r_p: f64,
    pub r_n: f64,
    pub r_arrival: f64,
    pub w_g: f64,
    /// Entropy-bonus coefficient used by the trainer, not by [`reward`].
    pub xi: f64,
    pub arrival_enabled: bool,
    pub progress_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_collision: -15.0,
            w_w: -0.1,
            w_abs_threshold: 0.7,
            r_p: 2.5,
            r_n: -0.5,
            r_arrival: 15.0,
            w_g: 2.5,
            xi: 0.1,
            arrival_enabled: true,
            progress_enabled: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_collision < 0.0) {
            return Err("r_collision must be negative".into());
        }
        if !(self.r_p > 0.0 && self.r_n < 0.0) {
            return Err("need r_p > 0 > r_n".into());
        }
        Ok(())
    }
}

/// Everything the reward needs to know about one transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardContext {
    pub collided: bool,
    /// Commanded rotational velocity.
    pub w: f64,
    /// A target is locked and its confidence was below the threshold at the
    /// start of the tick.
    pub pursuing: bool,
    /// Target confidence before and after the tick; `None` when the target
    /// was not detected.
    pub p_prev: Option<f64>,
    pub p_now: Option<f64>,
    /// The target's confidence reached the threshold for the first time.
    pub arrived: bool,
    /// Decrease in distance to the pursuit goal over the tick.
    pub progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_c: f64,
    pub r_w: f64,
    pub r_h: f64,
    /// Arrival bonus plus goal-progress shaping.
    pub shaping: f64,
    pub total: f64,
}

pub fn reward_terms(ctx: &RewardContext, cfg: &RewardConfig) -> RewardTerms {
    let r_c = if ctx.collided { cfg.r_collision } else { 0.0 };
    let r_w = if ctx.w.abs() > cfg.w_abs_threshold {
        cfg.w_w * ctx.w.abs()
    } else {
        0.0
    };
    let r_h = if ctx.pursuing {
        match (ctx.p_prev, ctx.p_now) {
            (Some(a), Some(b)) if b > a => cfg.r_p,
            (None, Some(_)) => cfg.r_p,
            _ => cfg.r_n,
        }
    } else {
        0.0
    };
    let mut shaping = 0.0;
    if cfg.arrival_enabled && ctx.arrived {
        shaping += cfg.r_arrival;
    }
    if cfg.progress_enabled && ctx.pursuing {
        shaping += cfg.w_g * ctx.progress;
    }
    RewardTerms {
        r_c,
        r_w,
        r_h,
        shaping,
        total: r_c + r_w + r_h + shaping,
    }
}

pub fn reward(ctx: &RewardContext, cfg: &RewardConfig) -> f64 {
    reward_terms(ctx, cfg).total
}
