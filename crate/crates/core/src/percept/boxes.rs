use serde::{Deserialize, Serialize};

use super::PerceptError;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, PerceptError> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        if b.is_well_formed() {
            Ok(b)
        } else {
            Err(PerceptError::Domain(format!("degenerate box {b:?}")))
        }
    }

    pub fn is_well_formed(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmax > self.xmin
            && self.ymax > self.ymin
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DChangeMode {
    /// Squared corner offsets divided by the box side.
    #[default]
    Literal,
    /// Corner offsets divided by the box side, then squared.
    Normalized,
}

/// Relative corner change between a prior and a ground-truth box.
pub fn d_change(prior: &BBox, gt: &BBox) -> Result<f64, PerceptError> {
    d_change_with(prior, gt, DChangeMode::Literal)
}

pub fn d_change_with(prior: &BBox, gt: &BBox, mode: DChangeMode) -> Result<f64, PerceptError> {
    if !gt.is_well_formed() {
        return Err(PerceptError::Domain(format!(
            "ground-truth box has no area: {gt:?}"
        )));
    }
    let (w, h) = (gt.width(), gt.height());
    let dy_tl = (prior.ymin - gt.ymin).abs();
    let dx_tl = (prior.xmin - gt.xmin).abs();
    let dy_br = (prior.ymax - gt.ymax).abs();
    let dx_br = (prior.xmax - gt.xmax).abs();
    let sum = match mode {
        DChangeMode::Literal => {
            dy_tl * dy_tl / h + dx_tl * dx_tl / w + dy_br * dy_br / h + dx_br * dx_br / w
        }
        DChangeMode::Normalized => {
            (dy_tl / h).powi(2) + (dx_tl / w).powi(2) + (dy_br / h).powi(2) + (dx_br / w).powi(2)
        }
    };
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorMatch {
    pub gt: usize,
    pub prior: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorMatches {
    /// Best prior for each ground-truth box, in ground-truth order.
    pub best: Vec<PriorMatch>,
    /// Per prior: the ground truth it is a positive for, if any.
    pub positives: Vec<Option<PriorMatch>>,
}

/// Assigns every ground-truth box its closest prior under `d_change` (lowest
/// prior index on ties) and marks as positive every prior within
/// `threshold` of some ground truth.
pub fn match_priors(
    priors: &[BBox],
    gts: &[BBox],
    threshold: f64,
) -> Result<PriorMatches, PerceptError> {
    let mut positives: Vec<Option<PriorMatch>> = vec![None; priors.len()];
    let mut best = Vec::with_capacity(gts.len());
    for (g, gt) in gts.iter().enumerate() {
        let mut winner: Option<PriorMatch> = None;
        for (p, prior) in priors.iter().enumerate() {
            let distance = d_change(prior, gt)?;
            let m = PriorMatch {
                gt: g,
                prior: p,
                distance,
            };
            if winner.is_none_or(|w| distance < w.distance) {
                winner = Some(m);
            }
            if distance <= threshold && positives[p].is_none_or(|q| distance < q.distance) {
                positives[p] = Some(m);
            }
        }
        if let Some(w) = winner {
            if positives[w.prior].is_none() {
                positives[w.prior] = Some(w);
            }
            best.push(w);
        }
    }
    Ok(PriorMatches { best, positives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn d_change_fixtures() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(d_change(&gt, &gt).unwrap(), 0.0);
        assert!((d_change(&b(1.0, 0.0, 11.0, 10.0), &gt).unwrap() - 0.2f64.sqrt()).abs() < 1e-12);
        assert!((d_change(&b(2.0, 0.0, 12.0, 10.0), &gt).unwrap() - 0.8f64.sqrt()).abs() < 1e-12);
        let normalized =
            d_change_with(&b(1.0, 0.0, 11.0, 10.0), &gt, DChangeMode::Normalized).unwrap();
        assert!((normalized - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_ground_truth_is_a_domain_error() {
        let flat = BBox {
            xmin: 0.0,
            ymin: 0.0,
            xmax: 5.0,
            ymax: 0.0,
        };
        assert!(matches!(
            d_change(&b(0.0, 0.0, 1.0, 1.0), &flat),
            Err(PerceptError::Domain(_))
        ));
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn matching_fixtures() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        let m = match_priors(&[gt], &[gt], 0.5).unwrap();
        assert_eq!(
            m.best,
            vec![PriorMatch {
                gt: 0,
                prior: 0,
                distance: 0.0
            }]
        );

        let priors = [b(1.0, 0.0, 11.0, 10.0), b(2.0, 0.0, 12.0, 10.0)];
        let m = match_priors(&priors, &[gt], 0.5).unwrap();
        assert_eq!(m.best[0].prior, 0);
        assert!((m.best[0].distance - 0.44721).abs() < 1e-5);
        assert!(m.positives[0].is_some());
        assert!(m.positives[1].is_none());

        let m = match_priors(&priors, &[], 0.5).unwrap();
        assert!(m.best.is_empty());
        assert!(m.positives.iter().all(Option::is_none));
    }

    #[test]
    fn ties_go_to_lowest_prior_index() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        let priors = [b(1.0, 0.0, 11.0, 10.0), b(-1.0, 0.0, 9.0, 10.0)];
        let m = match_priors(&priors, &[gt], 0.0).unwrap();
        assert_eq!(m.best[0].prior, 0);
        // best prior is forced positive even above threshold
        assert_eq!(m.positives[0].map(|p| p.gt), Some(0));
        assert!(m.positives[1].is_none());
    }

    proptest! {
        #[test]
        fn d_change_is_zero_on_self_and_non_negative(
            x in -50.0f64..50.0, y in -50.0f64..50.0, w in 0.5f64..40.0, h in 0.5f64..40.0,
            dx in -10.0f64..10.0, dy in -10.0f64..10.0,
        ) {
            let gt = b(x, y, x + w, y + h);
            prop_assert_eq!(d_change(&gt, &gt).unwrap(), 0.0);
            let prior = BBox { xmin: x + dx, ymin: y + dy, xmax: x + w, ymax: y + h + dy };
            prop_assert!(d_change(&prior, &gt).unwrap() >= 0.0);
        }
    }
}
