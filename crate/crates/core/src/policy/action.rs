use serde::{Deserialize, Serialize};

use crate::world::{Velocity, V_MAX, V_MIN, W_MAX};

/// Discrete velocity commands: the cross product of translational and
/// rotational levels. Action `i` is `(v_levels[i / w_count], w_levels[i % w_count])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub v_levels: Vec<f64>,
    pub w_levels: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self::uniform(5, 5)
    }
}

impl ActionSpace {
    /// Evenly spaced levels spanning the full velocity bounds.
    pub fn uniform(v_count: usize, w_count: usize) -> Self {
        let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![lo];
            }
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            v_levels: lin(V_MIN, V_MAX, v_count),
            w_levels: lin(-W_MAX, W_MAX, w_count),
        }
    }

    pub fn len(&self) -> usize {
        self.v_levels.len() * self.w_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn velocity(&self, index: usize) -> Velocity {
        let n = self.w_levels.len();
        Velocity {
            v: self.v_levels[index / n],
            w: self.w_levels[index % n],
        }
    }

    pub fn actions(&self) -> Vec<Velocity> {
        (0..self.len()).map(|i| self.velocity(i)).collect()
    }

    /// Index of the action nearest to `vel` (squared distance, lowest index on ties).
    pub fn nearest(&self, vel: Velocity) -> usize {
        let d = |i: usize| {
            let a = self.velocity(i);
            (a.v - vel.v).powi(2) + (a.w - vel.w).powi(2)
        };
        (0..self.len())
            .min_by(|&a, &b| d(a).total_cmp(&d(b)))
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let a = ActionSpace::default();
        assert_eq!(a.len(), 25);
        assert!(a.actions().iter().all(Velocity::in_bounds));
        assert_eq!(a.velocity(0), Velocity { v: 0.0, w: -1.0 });
        assert_eq!(a.velocity(24), Velocity { v: 1.0, w: 1.0 });
        assert_eq!(a.velocity(2 * 5 + 2), Velocity { v: 0.5, w: 0.0 });
        assert_eq!(a.nearest(Velocity::ZERO), 2);
    }
}
