//! Latent-space generation of potential malicious sessions.
//!
//! Two kinds of points are generated per malicious anchor, both as mixes of
//! the anchor with a sampled malicious peer:
//!
//! * similar: convex mixes with coefficient drawn from `U(beta1, 1)`, staying
//!   close to the anchor;
//! * diverse: affine mixes with coefficient drawn from `U(-beta2, beta2)`,
//!   allowed to extrapolate far outside the convex hull, kept only when they
//!   land outside the normal-session hypersphere (the false-positive filter).

use rand::distributions::Uniform;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedSession;
use crate::error::{Error, Result};
use crate::scalar::{distance, mean_vector, Scalar};
use crate::seeding::rng_for;

/// Center and radius of the normal-session region in encoded space.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypersphere<S> {
    pub center: Vec<S>,
    pub radius: S,
}

impl<S: Scalar> Hypersphere<S> {
    /// False-positive indicator: 1 when `z` lies inside or on the sphere.
    pub fn fp(&self, z: &[S]) -> u8 {
        u8::from(distance(z, &self.center) <= self.radius)
    }
}

/// Estimate the sphere from normal encodings: the center is their mean, the
/// radius the `quantile`-quantile of distances to it (sorted distances at
/// index `ceil(q * n) - 1`).
pub fn estimate_hypersphere<S: Scalar>(
    normal_encodings: &[Vec<S>],
    quantile: f64,
) -> Result<Hypersphere<S>> {
    if normal_encodings.is_empty() {
        return Err(Error::validation(
            "hypersphere needs at least one normal encoding",
        ));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::validation(format!(
            "quantile {quantile} outside (0, 1]"
        )));
    }
    let center = mean_vector(normal_encodings);
    let mut distances: Vec<S> = normal_encodings
        .iter()
        .map(|z| distance(z, &center))
        .collect();
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((quantile * distances.len() as f64).ceil() as usize)
        .clamp(1, distances.len())
        - 1;
    Ok(Hypersphere {
        center,
        radius: distances[idx],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratedKind {
    Similar,
    Diverse,
}

/// A generated point in encoded space plus the provenance needed to
/// reproduce it: `z = lambda * anchor + (1 - lambda) * peer`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedEncoding<S> {
    pub z: Vec<S>,
    pub kind: GeneratedKind,
    pub anchor_id: String,
    pub peer_id: String,
    /// Index of the peer within the pool passed at generation time.
    pub peer_index: usize,
    pub lambda: S,
}

/// Provenance of a diverse candidate the false-positive filter rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCandidate<S> {
    pub anchor_id: String,
    pub peer_id: String,
    pub lambda: S,
}

/// Output of one generation call.
#[derive(Debug, Clone)]
pub struct Generated<S> {
    pub encodings: Vec<GeneratedEncoding<S>>,
    /// Diverse candidates rejected by the false-positive filter.
    pub rejected: Vec<RejectedCandidate<S>>,
}

impl<S> Default for Generated<S> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<S> Generated<S> {
    fn empty() -> Self {
        Generated {
            encodings: Vec::new(),
            rejected: Vec::new(),
        }
    }

    /// Number of candidates removed by the filter.
    pub fn filtered(&self) -> usize {
        self.rejected.len()
    }
}

/// `lambda * a + (1 - lambda) * b`, the single mix kernel used both at
/// generation time and when losses re-derive generated points, so provenance
/// recomputation is bit-exact.
pub fn mix<S: Scalar>(lambda: S, a: &[S], b: &[S]) -> Vec<S> {
    debug_assert_eq!(a.len(), b.len());
    let complement = S::one() - lambda;
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * *x + complement * *y)
        .collect()
}

/// Generate `count` similar potential malicious sessions around `anchor`.
/// Returns an empty set when the peer pool is empty.
pub fn generate_similar<S: Scalar>(
    anchor: &EncodedSession<S>,
    pool: &[&EncodedSession<S>],
    count: usize,
    beta1: f64,
    seed: u64,
) -> Result<Generated<S>> {
    if !(0.0..=1.0).contains(&beta1) {
        return Err(Error::validation(format!("beta1 {beta1} outside [0, 1]")));
    }
    if pool.is_empty() {
        return Ok(Generated::empty());
    }
    let mut rng = rng_for(seed, "generate-similar");
    let lambda_dist = Uniform::new_inclusive(S::from_config(beta1), S::one());
    let mut encodings = Vec::with_capacity(count);
    for _ in 0..count {
        let lambda = rng.sample(&lambda_dist);
        let peer_index = rng.gen_range(0..pool.len());
        let peer = pool[peer_index];
        encodings.push(GeneratedEncoding {
            z: mix(lambda, &anchor.z, &peer.z),
            kind: GeneratedKind::Similar,
            anchor_id: anchor.session_id.clone(),
            peer_id: peer.session_id.clone(),
            peer_index,
            lambda,
        });
    }
    Ok(Generated {
        encodings,
        rejected: Vec::new(),
    })
}

/// Draw `max_count` diverse candidates around `anchor` and keep those that
/// fall outside `sphere`. With `apply_filter` off (ablation), every candidate
/// is kept. Returns an empty set when the peer pool is empty.
pub fn generate_diverse<S: Scalar>(
    anchor: &EncodedSession<S>,
    pool: &[&EncodedSession<S>],
    max_count: usize,
    beta2: f64,
    sphere: &Hypersphere<S>,
    apply_filter: bool,
    seed: u64,
) -> Result<Generated<S>> {
    if beta2 <= 0.0 {
        return Err(Error::validation(format!("beta2 {beta2} must be positive")));
    }
    if pool.is_empty() {
        return Ok(Generated::empty());
    }
    let mut rng = rng_for(seed, "generate-diverse");
    let bound = S::from_config(beta2);
    let lambda_dist = Uniform::new_inclusive(-bound, bound);
    let mut out = Generated::empty();
    for _ in 0..max_count {
        let lambda = rng.sample(&lambda_dist);
        let peer_index = rng.gen_range(0..pool.len());
        let peer = pool[peer_index];
        let z = mix(lambda, &anchor.z, &peer.z);
        if apply_filter && sphere.fp(&z) == 1 {
            out.rejected.push(RejectedCandidate {
                anchor_id: anchor.session_id.clone(),
                peer_id: peer.session_id.clone(),
                lambda,
            });
            continue;
        }
        out.encodings.push(GeneratedEncoding {
            z,
            kind: GeneratedKind::Diverse,
            anchor_id: anchor.session_id.clone(),
            peer_id: peer.session_id.clone(),
            peer_index,
            lambda,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn enc(id: &str, z: Vec<f64>) -> EncodedSession<f64> {
        EncodedSession {
            z,
            session_id: id.to_string(),
            label: Some(1),
        }
    }

    #[test]
    fn identical_normals_give_zero_radius() {
        let points = vec![vec![1.0, 2.0]; 5];
        let sphere = estimate_hypersphere(&points, 0.95).unwrap();
        assert_eq!(sphere.center, vec![1.0, 2.0]);
        assert_eq!(sphere.radius, 0.0);
    }

    #[test]
    fn two_points_full_quantile() {
        let points = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let sphere = estimate_hypersphere(&points, 1.0).unwrap();
        assert_eq!(sphere.center, vec![1.0, 0.0]);
        assert_eq!(sphere.radius, 1.0);
    }

    #[test]
    fn quantile_matches_sorted_distances_oracle() {
        let mut rng = rng_for(77, "sphere-test");
        let points: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let sphere = estimate_hypersphere(&points, 0.95).unwrap();

        let center = mean_vector(&points);
        let mut dists: Vec<f64> = points.iter().map(|p| distance(p, &center)).collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = dists[(0.95f64 * 100.0).ceil() as usize - 1];
        assert_eq!(sphere.radius, expected);
    }

    #[test]
    fn fp_boundary_cases() {
        let sphere = Hypersphere {
            center: vec![0.0, 0.0],
            radius: 2.0,
        };
        assert_eq!(sphere.fp(&[0.0, 0.0]), 1);
        assert_eq!(sphere.fp(&[2.0, 0.0]), 1); // exactly on the boundary
        assert_eq!(sphere.fp(&[2.0 + 1e-6, 0.0]), 0);
    }

    #[test]
    fn similar_with_beta1_one_copies_anchor() {
        let anchor = enc("a", vec![1.0, -2.0, 0.5]);
        let peer = enc("p", vec![9.0, 9.0, 9.0]);
        let out = generate_similar(&anchor, &[&peer], 20, 1.0, 3).unwrap();
        assert_eq!(out.encodings.len(), 20);
        for g in &out.encodings {
            assert_eq!(g.z, anchor.z);
            assert_eq!(g.lambda, 1.0);
        }
    }

    #[test]
    fn similar_outputs_lie_on_segment() {
        let anchor = enc("a", vec![0.0, 0.0]);
        let peers = [enc("p0", vec![4.0, 0.0]), enc("p1", vec![0.0, -8.0])];
        let pool: Vec<&EncodedSession<f64>> = peers.iter().collect();
        let beta1 = 0.92;
        let out = generate_similar(&anchor, &pool, 50, beta1, 9).unwrap();
        for g in &out.encodings {
            assert!(g.lambda >= beta1 && g.lambda <= 1.0);
            // Provenance recomputation reproduces z exactly.
            assert_eq!(g.z, mix(g.lambda, &anchor.z, &pool[g.peer_index].z));
            // ||z - anchor|| <= (1 - beta1) * ||peer - anchor||
            let d = distance(&g.z, &anchor.z);
            let span = distance(&pool[g.peer_index].z, &anchor.z);
            assert!(d <= (1.0 - beta1) * span + 1e-12);
        }
    }

    #[test]
    fn similar_empty_pool_returns_empty() {
        let anchor = enc("a", vec![1.0]);
        let out = generate_similar::<f64>(&anchor, &[], 10, 0.9, 0).unwrap();
        assert!(out.encodings.is_empty());
    }

    #[test]
    fn diverse_respects_filter_and_provenance() {
        let anchor = enc("a", vec![3.0, 0.0]);
        let peers = [enc("p0", vec![0.0, 3.0]), enc("p1", vec![-3.0, -1.0])];
        let pool: Vec<&EncodedSession<f64>> = peers.iter().collect();
        let sphere = Hypersphere {
            center: vec![0.0, 0.0],
            radius: 1.5,
        };
        let out = generate_diverse(&anchor, &pool, 200, 4.0, &sphere, true, 21).unwrap();
        assert!(out.encodings.len() <= 200);
        assert_eq!(out.encodings.len() + out.filtered(), 200);
        for g in &out.encodings {
            assert_eq!(sphere.fp(&g.z), 0);
            assert_eq!(g.z, mix(g.lambda, &anchor.z, &pool[g.peer_index].z));
            assert!(g.lambda >= -4.0 && g.lambda <= 4.0);
        }
        // beta2 > 1 must actually extrapolate outside [0, 1] somewhere.
        assert!(out
            .encodings
            .iter()
            .any(|g| g.lambda < 0.0 || g.lambda > 1.0));
    }

    #[test]
    fn diverse_huge_radius_filters_everything() {
        let anchor = enc("a", vec![1.0, 1.0]);
        let peer = enc("p", vec![-1.0, 2.0]);
        let sphere = Hypersphere {
            center: vec![0.0, 0.0],
            radius: 1e308,
        };
        let out = generate_diverse(&anchor, &[&peer], 50, 4.0, &sphere, true, 5).unwrap();
        assert!(out.encodings.is_empty());
        assert_eq!(out.filtered(), 50);
    }

    #[test]
    fn diverse_bypass_admits_all() {
        let anchor = enc("a", vec![1.0, 1.0]);
        let peer = enc("p", vec![-1.0, 2.0]);
        let sphere = Hypersphere {
            center: vec![0.0, 0.0],
            radius: 1e308,
        };
        let out = generate_diverse(&anchor, &[&peer], 50, 4.0, &sphere, false, 5).unwrap();
        assert_eq!(out.encodings.len(), 50);
        assert_eq!(out.filtered(), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let anchor = enc("a", vec![1.0, 0.0]);
        let peer = enc("p", vec![0.0, 1.0]);
        let a = generate_similar(&anchor, &[&peer], 10, 0.9, 123).unwrap();
        let b = generate_similar(&anchor, &[&peer], 10, 0.9, 123).unwrap();
        assert_eq!(a.encodings, b.encodings);
    }
}
