use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Trajectory, WAYPOINTS};
use crate::error::VocabError;

#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// The candidate nearest each final centroid, in centroid order.
    pub trajectories: Vec<Trajectory>,
    /// Mean squared RMS distance to the assigned centroid, one entry per assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / WAYPOINTS as f64
}

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

/// Lloyd's algorithm with k-means++ seeding under the RMS trajectory distance,
/// followed by a medoid snap so every output is an actual candidate.
pub fn kmeans_cluster(
    candidates: &[Trajectory],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansOutcome, VocabError> {
    let n = candidates.len();
    if k == 0 || k > n {
        return Err(VocabError::TooFewCandidates { k, candidates: n });
    }
    let points: Vec<Vec<f64>> = candidates.iter().map(|t| t.positions()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > r && *d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }

    let mut assign = vec![usize::MAX; n];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let next: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        objective.push(next.iter().map(|(_, d)| d).sum::<f64>() / n as f64);
        let changed = next.iter().zip(&assign).any(|((a, _), b)| a != b);
        assign = next.into_iter().map(|(a, _)| a).collect();
        if !changed {
            converged = true;
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            // empty clusters keep their previous centroid
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }

    let mut taken = vec![false; n];
    let mut trajectories = Vec::with_capacity(k);
    for c in &centroids {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            if !taken[i] {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
        }
        taken[best.0] = true;
        trajectories.push(candidates[best.0].clone());
    }
    Ok(KMeansOutcome {
        trajectories,
        objective,
        iterations,
        converged,
    })
}
