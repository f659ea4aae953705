//! K-means clustering and silhouette-based cluster counting.
//!
//! Used to estimate how many malicious behavior clusters a corpus contains:
//! run k-means for each candidate `k` and keep the `k` with the highest mean
//! silhouette coefficient.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{distance, Scalar};
use crate::seeding::rng_for;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

/// Output of one k-means fit.
#[derive(Debug, Clone)]
pub struct KMeans<S> {
    pub centers: Vec<Vec<S>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: S,
}

fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

fn nearest_center<S: Scalar>(point: &[S], centers: &[Vec<S>]) -> (usize, S) {
    let mut best = 0;
    let mut best_d = S::infinity();
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Seed `k` centers with the k-means++ scheme.
fn seed_centers<S: Scalar, R: Rng>(points: &[Vec<S>], k: usize, rng: &mut R) -> Vec<Vec<S>> {
    let mut centers: Vec<Vec<S>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    while centers.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| nearest_center(p, &centers).1.to_report())
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            // All remaining points coincide with a center; reuse any point.
            centers.push(points[rng.gen_range(0..points.len())].clone());
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen].clone());
    }
    centers
}

fn lloyd<S: Scalar>(points: &[Vec<S>], mut centers: Vec<Vec<S>>) -> KMeans<S> {
    let dim = points[0].len();
    let k = centers.len();
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest_center(p, &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![S::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += *x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seat an empty cluster on the point farthest from its center.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centers[assignments[a]]);
                        let db = squared_distance(&points[b], &centers[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                changed = true;
            } else {
                let n = S::from_usize(counts[c]).unwrap();
                for (ctr, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ctr = *s / n;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &c)| squared_distance(p, &centers[c]))
        .fold(S::zero(), |acc, d| acc + d);
    KMeans {
        centers,
        assignments,
        inertia,
    }
}

/// K-means with k-means++ seeding and a fixed number of seeded restarts;
/// returns the restart with the lowest inertia.
pub fn kmeans<S: Scalar>(points: &[Vec<S>], k: usize, seed: u64) -> Result<KMeans<S>> {
    if k == 0 || k > points.len() {
        return Err(Error::validation(format!(
            "k={} outside [1, {}]",
            k,
            points.len()
        )));
    }
    let mut best: Option<KMeans<S>> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = rng_for(seed, &format!("kmeans/k{k}/r{restart}"));
        let fit = lloyd(points, seed_centers(points, k, &mut rng));
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Mean silhouette coefficient of a clustering. Singleton clusters score 0.
pub fn mean_silhouette<S: Scalar>(points: &[Vec<S>], assignments: &[usize]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::validation("silhouette needs at least 2 points"));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let sizes = {
        let mut sizes = vec![0usize; k];
        for &a in assignments {
            sizes[a] += 1;
        }
        sizes
    };
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::validation("silhouette needs at least 2 clusters"));
    }

    let mut total = 0.0;
    for i in 0..n {
        // Mean distance from point i to every cluster.
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += distance(&points[i], &points[j]).to_report();
            }
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue; // s(i) = 0 by convention
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Pick the cluster count in `k_range` (inclusive) that maximizes the mean
/// silhouette coefficient under seeded k-means. Ties go to the smaller `k`.
pub fn silhouette_cluster_count<S: Scalar>(
    points: &[Vec<S>],
    k_range: (usize, usize),
    seed: u64,
) -> Result<usize> {
    if points.len() < 3 {
        return Err(Error::validation(format!(
            "cluster counting needs at least 3 points, got {}",
            points.len()
        )));
    }
    let (k_lo, k_hi) = k_range;
    if k_lo < 2 || k_hi < k_lo || k_hi > points.len() - 1 {
        return Err(Error::validation(format!(
            "k_range [{k_lo}, {k_hi}] outside [2, {}]",
            points.len() - 1
        )));
    }
    let first = &points[0];
    if points.iter().all(|p| p == first) {
        return Err(Error::validation(
            "all points identical; silhouette undefined",
        ));
    }

    let mut best_k = k_lo;
    let mut best_score = f64::NEG_INFINITY;
    for k in k_lo..=k_hi {
        let fit = kmeans(points, k, seed)?;
        let score = mean_silhouette(points, &fit.assignments)?;
        if score > best_score {
            best_score = score;
            best_k = k;
        }
    }
    Ok(best_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(centers: &[[f64; 2]], per_blob: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, "test-blobs");
        let mut points = Vec::new();
        for c in centers {
            for _ in 0..per_blob {
                points.push(vec![
                    c[0] + rng.gen_range(-spread..spread),
                    c[1] + rng.gen_range(-spread..spread),
                ]);
            }
        }
        points
    }

    /// Reference silhouette written independently of `mean_silhouette`.
    fn naive_silhouette(points: &[Vec<f64>], assign: &[usize]) -> f64 {
        let n = points.len();
        let clusters: std::collections::BTreeSet<usize> = assign.iter().copied().collect();
        let mut acc = 0.0;
        for i in 0..n {
            let mine = assign[i];
            let same: Vec<usize> = (0..n).filter(|&j| j != i && assign[j] == mine).collect();
            if same.is_empty() {
                continue;
            }
            let a: f64 = same
                .iter()
                .map(|&j| distance(&points[i], &points[j]))
                .sum::<f64>()
                / same.len() as f64;
            let mut b = f64::INFINITY;
            for &c in &clusters {
                if c == mine {
                    continue;
                }
                let other: Vec<usize> = (0..n).filter(|&j| assign[j] == c).collect();
                if other.is_empty() {
                    continue;
                }
                let d: f64 = other
                    .iter()
                    .map(|&j| distance(&points[i], &points[j]))
                    .sum::<f64>()
                    / other.len() as f64;
                b = b.min(d);
            }
            acc += (b - a) / a.max(b);
        }
        acc / n as f64
    }

    #[test]
    fn three_blobs_give_three_clusters() {
        let points = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 15, 0.5, 3);
        let k = silhouette_cluster_count(&points, (2, 6), 42).unwrap();
        assert_eq!(k, 3);

        // Cross-check the silhouette value against an independent evaluation.
        let fit = kmeans(&points, 3, 42).unwrap();
        let ours = mean_silhouette(&points, &fit.assignments).unwrap();
        let naive = naive_silhouette(&points, &fit.assignments);
        assert!((ours - naive).abs() < 1e-12, "{ours} vs {naive}");
    }

    #[test]
    fn identical_points_rejected() {
        let points = vec![vec![1.0f64, 2.0]; 10];
        let err = silhouette_cluster_count(&points, (2, 4), 0).unwrap_err();
        assert!(err.to_string().contains("identical"));
    }

    #[test]
    fn too_few_points_rejected() {
        let points = vec![vec![0.0f64], vec![1.0]];
        assert!(silhouette_cluster_count(&points, (2, 2), 0).is_err());
    }

    #[test]
    fn k_range_validated() {
        let points = blobs(&[[0.0, 0.0], [5.0, 5.0]], 5, 0.1, 1);
        assert!(silhouette_cluster_count(&points, (1, 3), 0).is_err());
        assert!(silhouette_cluster_count(&points, (2, 10), 0).is_err());
    }

    #[test]
    fn kmeans_separates_obvious_blobs() {
        let points = blobs(&[[0.0, 0.0], [50.0, 50.0]], 10, 0.5, 9);
        let fit = kmeans(&points, 2, 7).unwrap();
        let first = fit.assignments[0];
        assert!(fit.assignments[..10].iter().all(|&a| a == first));
        assert!(fit.assignments[10..].iter().all(|&a| a != first));
    }
}
