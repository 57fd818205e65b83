use serde::{Deserialize, Serialize};

use super::PerceptError;

/// Per-task loss values, in the order semantic, offsets, box, class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskLosses {
    pub sem: f64,
    pub off: f64,
    pub bbox: f64,
    pub cls: f64,
}

impl TaskLosses {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sem, self.off, self.bbox, self.cls]
    }
}

/// Learned per-task uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSigmas {
    pub sem: f64,
    pub off: f64,
    pub bbox: f64,
    pub cls: f64,
}

impl Default for TaskSigmas {
    fn default() -> Self {
        Self {
            sem: 1.0,
            off: 1.0,
            bbox: 1.0,
            cls: 1.0,
        }
    }
}

impl TaskSigmas {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sem, self.off, self.bbox, self.cls]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            sem: a[0],
            off: a[1],
            bbox: a[2],
            cls: a[3],
        }
    }
}

/// `Σ L/σ² + ln σ` over the four tasks, with `∂/∂σ = −2L/σ³ + 1/σ`.
pub fn hybrid_loss(
    losses: &TaskLosses,
    sigmas: &TaskSigmas,
) -> Result<(f64, [f64; 4]), PerceptError> {
    let mut total = 0.0;
    let mut grad = [0.0; 4];
    for (i, (l, s)) in losses
        .as_array()
        .into_iter()
        .zip(sigmas.as_array())
        .enumerate()
    {
        if !(s > 0.0) || !s.is_finite() {
            return Err(PerceptError::Domain(format!(
                "sigma must be positive and finite, got {s}"
            )));
        }
        if !(l >= 0.0) || !l.is_finite() {
            return Err(PerceptError::Domain(format!(
                "task loss must be non-negative and finite, got {l}"
            )));
        }
        total += l / (s * s) + s.ln();
        grad[i] = -2.0 * l / (s * s * s) + 1.0 / s;
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

fn check_probability(p: f64) -> Result<(), PerceptError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(PerceptError::Domain(format!(
            "probability must lie in (0, 1], got {p}"
        )))
    }
}

/// `−α (1 − p)^γ ln p` for the probability `p` of the true class.
pub fn focal_loss(p: f64, gamma: f64, alpha: f64) -> Result<f64, PerceptError> {
    check_probability(p)?;
    Ok(-alpha * (1.0 - p).powf(gamma) * p.ln())
}

/// Derivative of [`focal_loss`] with respect to `p`.
pub fn focal_loss_grad(p: f64, gamma: f64, alpha: f64) -> Result<f64, PerceptError> {
    check_probability(p)?;
    let q = 1.0 - p;
    let modulating = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    Ok(alpha * (modulating - q.powf(gamma) / p))
}
