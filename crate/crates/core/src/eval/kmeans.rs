//! Lloyd's k-means with k-means++ seeding over flattened spectral fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{sq_dist, Scalar};

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    pub count: usize,
    /// Mean over members of the RMS of their coefficients.
    pub mean_magnitude: f64,
    pub members: Vec<usize>,
}

/// Clusters ordered by decreasing mean magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<Cluster>,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterReport {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn top(&self, n: usize) -> &[Cluster] {
        &self.clusters[..n.min(self.clusters.len())]
    }

    pub fn final_sse(&self) -> f64 {
        *self.sse_history.last().expect("at least one assignment step")
    }
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            // Every point already coincides with a centroid.
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

pub fn kmeans_cluster<S: Scalar>(samples: &[Vec<S>], k: usize, seed: u64) -> Result<ClusterReport> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if k > samples.len() {
        return invalid(format!("k = {k} exceeds the {} samples", samples.len()));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return invalid("samples differ in dimension");
    }
    let points: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&points, k, &mut rng);
    let mut assign = vec![0usize; points.len()];
    let mut dist = vec![0.0; points.len()];
    let mut sse_history = Vec::new();
    let mut iterations = 0;

    loop {
        for (i, p) in points.iter().enumerate() {
            (assign[i], dist[i]) = nearest(p, &centroids);
        }
        sse_history.push(dist.iter().sum());
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                // Re-seed from the point worst served by its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                dist[far] = 0.0;
                points[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < SHIFT_TOLERANCE {
            for (i, p) in points.iter().enumerate() {
                (assign[i], dist[i]) = nearest(p, &centroids);
            }
            sse_history.push(dist.iter().sum());
            break;
        }
    }

    let mut clusters: Vec<Cluster> = centroids
        .into_iter()
        .enumerate()
        .map(|(j, centroid)| {
            let members: Vec<usize> = (0..points.len()).filter(|&i| assign[i] == j).collect();
            let mean_magnitude = if members.is_empty() {
                0.0
            } else {
                members.iter().map(|&i| rms(&points[i])).sum::<f64>() / members.len() as f64
            };
            Cluster {
                centroid,
                count: members.len(),
                mean_magnitude,
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.mean_magnitude.total_cmp(&a.mean_magnitude));
    Ok(ClusterReport {
        clusters,
        sse_history,
        iterations,
    })
}
