use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PerceptError;

pub const DEFAULT_PRIOR_COUNT: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub width: f64,
    pub height: f64,
}

impl PriorBox {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<(f64, f64)>,
    pub assignments: Vec<usize>,
    /// Sum of squared point-to-centroid distances after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn dist_sq(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn nearest(p: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, dist_sq(p, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(
    points: &[(f64, f64)],
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<KMeansResult, PerceptError> {
    if k == 0 {
        return Err(PerceptError::Clustering("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(PerceptError::Clustering(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist_sq(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist_sq(p, c));
        }
    }

    let mut assignments = vec![0; points.len()];
    let mut inertia_history = Vec::new();
    for _ in 0..cfg.max_iterations {
        let mut inertia = 0.0;
        for (a, &p) in assignments.iter_mut().zip(points) {
            let (i, d) = nearest(p, &centroids);
            *a = i;
            inertia += d;
        }
        inertia_history.push(inertia);

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&a, &p) in assignments.iter().zip(points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        let mut max_shift: f64 = 0.0;
        for (c, &(sx, sy, n)) in centroids.iter_mut().zip(&sums) {
            if n == 0 {
                continue;
            }
            let next = (sx / n as f64, sy / n as f64);
            max_shift = max_shift.max(dist_sq(*c, next).sqrt());
            *c = next;
        }
        if max_shift < cfg.tolerance {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia_history,
    })
}

/// Clusters ground-truth `(width, height)` pairs into `k` prior shapes,
/// returned smallest area first.
pub fn cluster_priors(
    gt_dims: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<Vec<PriorBox>, PerceptError> {
    let result = kmeans(gt_dims, k, seed, &KMeansConfig::default())?;
    let mut priors: Vec<PriorBox> = result
        .centroids
        .into_iter()
        .map(|(width, height)| PriorBox { width, height })
        .collect();
    priors.sort_by(|a, b| {
        a.area()
            .total_cmp(&b.area())
            .then(a.width.total_cmp(&b.width))
    });
    Ok(priors)
}
