//! Lloyd's k-means with a seeded farthest-point initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::squared_distance;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Clusters into `min(k, n)` groups. The first center is a seeded random
/// point; each further center is the point farthest from the chosen ones
/// (lowest index on ties). A cluster that empties keeps its old centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeansResult {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return KMeansResult {
            assignment: vec![],
            centroids: vec![],
            iterations: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let (far, _) = nearest.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &d)| if d > best.1 { (i, d) } else { best },
        );
        centroids.push(points[far].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[far]));
        }
    }

    let closest = |p: &[f64], centroids: &[Vec<f64>]| {
        centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, squared_distance(p, c)))
            .fold(
                (0, f64::INFINITY),
                |best, (i, d)| if d < best.1 { (i, d) } else { best },
            )
            .0
    };
    let mut assignment: Vec<usize> = points.iter().map(|p| closest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| closest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    KMeansResult {
        assignment,
        centroids,
        iterations,
    }
}

/// Sum of squared distances from each point to its cluster mean.
pub fn within_cluster_ss(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let dim = members[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>()
        })
        .sum()
}
