//! Seeded k-means with k-means++ initialization and Lloyd iterations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::feature::euclidean;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Number of distinct points, compared bitwise.
pub fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if pick < *d {
                chosen = i;
                break;
            }
            pick -= d;
        }
        // guard against rounding landing on an existing centroid
        if d2[chosen] <= 0.0 {
            chosen = d2
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
        }
        let c = points[chosen].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into at most `k` groups. Fewer centroids come back when
/// there are fewer distinct points than `k`; empty clusters are dropped.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    if points.is_empty() || k == 0 {
        return Clustering {
            centroids: Vec::new(),
            assignments: Vec::new(),
            iterations: 0,
        };
    }
    let dims = points[0].len();
    let mut centroids = plus_plus(points, k.min(points.len()), rng);
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dims]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for (c, (sum, n)) in sums.into_iter().zip(&counts).enumerate() {
            if *n == 0 {
                continue;
            }
            let mean: Vec<f64> = sum.into_iter().map(|s| s / *n as f64).collect();
            moved = moved.max(euclidean(&mean, &centroids[c]));
            centroids[c] = mean;
        }
        if moved <= TOLERANCE {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(points) {
        *a = nearest(p, &centroids);
    }

    // drop empty clusters and renumber
    let mut used = vec![false; centroids.len()];
    for &a in &assignments {
        used[a] = true;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (c, centroid) in centroids.into_iter().enumerate() {
        if used[c] {
            remap[c] = kept.len();
            kept.push(centroid);
        }
    }
    for a in assignments.iter_mut() {
        *a = remap[*a];
    }
    Clustering {
        centroids: kept,
        assignments,
        iterations,
    }
}
