//! Lloyd k-means with seeded k-means++ initialization, and the silhouette
//! coefficient over the resulting clustering.

use rand::Rng as _;

use crate::eval::{EvalError, Result};
use crate::rng;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], centers: &mut Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centers.len();
    let d = points[0].len();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = sq_dist(p, &centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let dist = sq_dist(p, c);
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    (assign, inertia)
}

/// Seeded k-means with `KMEANS_RESTARTS` k-means++ initializations, keeping
/// the lowest-inertia run.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(EvalError::BadConfig(format!("k={k} must be >= 2")));
    }
    if points.len() < k {
        return Err(EvalError::Degenerate(format!(
            "{} samples for k={k} clusters",
            points.len()
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::stream(seed, restart as u64);
        let mut centers = kmeans_pp_init(points, k, &mut r);
        let (assign, inertia) = lloyd(points, &mut centers);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((assign, inertia));
        }
    }
    Ok(best.unwrap().0)
}

/// Mean silhouette coefficient s(i) = (b - a) / max(a, b) over all samples;
/// members of singleton clusters contribute 0.
pub fn silhouette_coefficient(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = assign[i];
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j == i {
                continue;
            }
            let dist = sq_dist(&points[i], &points[j]).sqrt();
            sums[assign[j]] += dist;
            counts[assign[j]] += 1;
        }
        if counts[own] == 0 {
            continue; // singleton cluster: s = 0
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let s = (b - a) / a.max(b);
            total += s;
        }
    }
    total / n as f64
}

/// Cluster a pooled feature set with k-means and report the mean
/// silhouette.
pub fn silhouette_from_features(features: &[Vec<f64>], k: usize, seed: u64) -> Result<f64> {
    let assign = kmeans(features, k, seed)?;
    Ok(silhouette_coefficient(features, &assign, k))
}
