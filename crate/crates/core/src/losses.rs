//! Training objectives: the pairwise contrastive term, the stage-1 supervised
//! contrastive and hypersphere-compression losses, and the stage-2 loss over
//! augmented candidate sets.
//!
//! Every aggregate returns both the loss value and its analytic gradient with
//! respect to each batch encoding. Batches are laid out as the member
//! sessions `S` followed by the auxiliary malicious sessions `S^1`; anchors
//! and the outer `1/R` average range over the members only, while candidate
//! sets span the whole batch.

use std::collections::HashMap;

use crate::augmentation::{mix, GeneratedEncoding};
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Pairwise contrastive loss between an anchor `z_i` and a positive `z_p`
/// against a candidate set that, per the defining sum, contains the positive:
/// `-log(exp(cos(z_i, z_p)/alpha) / sum_j exp(cos(z_i, z_j)/alpha))`.
pub fn pair_loss<S: Scalar>(
    z_i: &[S],
    z_p: &[S],
    candidates: &[&[S]],
    alpha: S,
) -> Result<S> {
    if candidates.is_empty() {
        return Err(Error::validation("candidate set is empty"));
    }
    if alpha <= S::zero() {
        return Err(Error::validation("temperature must be positive"));
    }
    let cos_p = checked_cosine(z_i, z_p)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        scores.push(checked_cosine(z_i, cand)? / alpha);
    }
    Ok(log_sum_exp(&scores) - cos_p / alpha)
}

fn checked_cosine<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    crate::scalar::cosine(a, b)
        .ok_or_else(|| Error::validation("cosine undefined for zero-norm vector"))
}

fn log_sum_exp<S: Scalar>(scores: &[S]) -> S {
    let max = scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum = scores
        .iter()
        .map(|&s| (s - max).exp())
        .fold(S::zero(), |a, b| a + b);
    max + sum.ln()
}

/// Result of an aggregate loss evaluation.
#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    pub loss: S,
    /// Gradient with respect to each batch encoding (members then auxiliary).
    pub grads: Vec<Vec<S>>,
    /// Number of (anchor, positive) pair terms evaluated.
    pub pair_invocations: usize,
    /// Anchors skipped because their positive set was empty.
    pub skipped_anchors: usize,
}

/// DeepSVDD-style output: the batch loss plus the center it was computed with.
#[derive(Debug, Clone)]
pub struct SvddOutput<S> {
    pub loss: S,
    pub center: Vec<S>,
    pub grads: Vec<Vec<S>>,
}

/// Accumulates one anchor's contrastive term and its gradients.
///
/// `candidates` are addressed by how their gradient routes back to the batch:
/// a real candidate maps to one batch index; a generated candidate maps to
/// two (anchor and peer) with mix weights.
struct AnchorTerm<'a, S> {
    anchor: &'a [S],
    anchor_index: usize,
    candidates: Vec<CandidateRef<'a, S>>,
    positives: Vec<usize>,
}

enum CandidateRef<'a, S> {
    Real {
        z: &'a [S],
        batch_index: usize,
    },
    Mixed {
        z: Vec<S>,
        lambda: S,
        anchor_index: usize,
        peer_index: usize,
    },
}

impl<'a, S: Scalar> CandidateRef<'a, S> {
    fn z(&self) -> &[S] {
        match self {
            CandidateRef::Real { z, .. } => z,
            CandidateRef::Mixed { z, .. } => z,
        }
    }
}

impl<'a, S: Scalar> AnchorTerm<'a, S> {
    /// Evaluate the anchor's mean pair loss over its positives and accumulate
    /// `scale * gradient` into `grads`. Returns the unscaled mean term.
    fn accumulate(&self, alpha: S, scale: S, grads: &mut [Vec<S>]) -> Result<S> {
        let n_pos = self.positives.len();
        debug_assert!(n_pos > 0);
        let anchor_norm = norm(self.anchor);
        if anchor_norm == S::zero() {
            return Err(Error::validation("cosine undefined for zero-norm vector"));
        }

        // Cosines against every candidate.
        let mut cosines = Vec::with_capacity(self.candidates.len());
        let mut cand_norms = Vec::with_capacity(self.candidates.len());
        for cand in &self.candidates {
            let z = cand.z();
            let n = norm(z);
            if n == S::zero() {
                return Err(Error::validation("cosine undefined for zero-norm vector"));
            }
            cosines.push(dot(self.anchor, z) / (anchor_norm * n));
            cand_norms.push(n);
        }
        let scores: Vec<S> = cosines.iter().map(|&c| c / alpha).collect();
        let lse = log_sum_exp(&scores);

        // Mean over positives of (lse - c_p / alpha).
        let inv_pos = S::one() / S::from_usize(n_pos).unwrap();
        let mut value = S::zero();
        for &p in &self.positives {
            value += lse - cosines[p] / alpha;
        }
        value *= inv_pos;

        // d(term)/d(cos_j) = softmax_j / alpha - [j is positive] / (alpha * n_pos)
        let mut pos_weight = vec![S::zero(); self.candidates.len()];
        for &p in &self.positives {
            pos_weight[p] += inv_pos;
        }
        let dim = self.anchor.len();
        let mut anchor_grad = vec![S::zero(); dim];
        for (j, cand) in self.candidates.iter().enumerate() {
            let softmax_j = (scores[j] - lse).exp();
            let dcos = (softmax_j - pos_weight[j]) / alpha;
            if dcos == S::zero() {
                continue;
            }
            let z = cand.z();
            let cn = cand_norms[j];
            let c = cosines[j];
            // d cos / d anchor and d cos / d candidate.
            let mut cand_grad = vec![S::zero(); dim];
            for d in 0..dim {
                let a_hat = self.anchor[d] / anchor_norm;
                let b_hat = z[d] / cn;
                anchor_grad[d] += dcos * (b_hat - c * a_hat) / anchor_norm;
                cand_grad[d] = dcos * (a_hat - c * b_hat) / cn;
            }
            match cand {
                CandidateRef::Real { batch_index, .. } => {
                    for d in 0..dim {
                        grads[*batch_index][d] += scale * cand_grad[d];
                    }
                }
                CandidateRef::Mixed {
                    lambda,
                    anchor_index,
                    peer_index,
                    ..
                } => {
                    let complement = S::one() - *lambda;
                    for d in 0..dim {
                        grads[*anchor_index][d] += scale * *lambda * cand_grad[d];
                        grads[*peer_index][d] += scale * complement * cand_grad[d];
                    }
                }
            }
        }
        for d in 0..dim {
            grads[self.anchor_index][d] += scale * anchor_grad[d];
        }
        Ok(value)
    }
}

fn validate_batch<S: Scalar>(encodings: &[Vec<S>], labels: &[u8], members: usize) -> Result<()> {
    if encodings.len() != labels.len() {
        return Err(Error::validation("encodings and labels length mismatch"));
    }
    if members > encodings.len() {
        return Err(Error::validation("member count exceeds batch size"));
    }
    if members == 0 {
        return Err(Error::validation("batch has no member sessions"));
    }
    Ok(())
}

/// Indices of malicious batch entries other than `anchor`, in batch order.
/// This is the peer-pool ordering the trainer uses for generation, and the
/// ordering `peer_index` in [`GeneratedEncoding`] refers to.
pub fn malicious_peers(labels: &[u8], anchor: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| j != anchor && y == 1)
        .map(|(j, _)| j)
        .collect()
}

/// Stage-1 supervised contrastive loss: normal anchors among the members,
/// positives are the other normal sessions, candidates are the whole batch
/// minus the anchor.
pub fn sup_contrastive_loss<S: Scalar>(
    encodings: &[Vec<S>],
    labels: &[u8],
    members: usize,
    alpha: S,
) -> Result<LossOutput<S>> {
    validate_batch(encodings, labels, members)?;
    if alpha <= S::zero() {
        return Err(Error::validation("temperature must be positive"));
    }
    let n = encodings.len();
    let inv_r = S::one() / S::from_usize(members).unwrap();
    let mut out = LossOutput {
        loss: S::zero(),
        grads: vec![vec![S::zero(); encodings[0].len()]; n],
        pair_invocations: 0,
        skipped_anchors: 0,
    };
    for i in 0..members {
        if labels[i] != 0 {
            continue;
        }
        let mut candidates = Vec::with_capacity(n - 1);
        let mut positives = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == 0 {
                positives.push(candidates.len());
            }
            candidates.push(CandidateRef::Real {
                z: encodings[j].as_slice(),
                batch_index: j,
            });
        }
        if positives.is_empty() {
            out.skipped_anchors += 1;
            continue;
        }
        out.pair_invocations += positives.len();
        let term = AnchorTerm {
            anchor: &encodings[i],
            anchor_index: i,
            candidates,
            positives,
        }
        .accumulate(alpha, inv_r, &mut out.grads)?;
        out.loss += inv_r * term;
    }
    Ok(out)
}

/// DeepSVDD loss over the member sessions: mean distance of normal encodings
/// to their own batch center. The center is part of the function, so
/// gradients flow through it.
pub fn deepsvdd_loss<S: Scalar>(encodings: &[Vec<S>], labels: &[u8]) -> Result<SvddOutput<S>> {
    if encodings.is_empty() || encodings.len() != labels.len() {
        return Err(Error::validation("empty batch or label mismatch"));
    }
    let normal_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if normal_idx.is_empty() {
        return Err(Error::validation(
            "DeepSVDD center undefined: batch has no normal sessions",
        ));
    }
    let dim = encodings[0].len();
    let r = S::from_usize(encodings.len()).unwrap();
    let r0 = S::from_usize(normal_idx.len()).unwrap();

    let mut center = vec![S::zero(); dim];
    for &i in &normal_idx {
        for (c, z) in center.iter_mut().zip(&encodings[i]) {
            *c += *z;
        }
    }
    center.iter_mut().for_each(|c| *c /= r0);

    // Unit directions from the center; zero where a point sits on the center.
    let mut loss = S::zero();
    let mut units: HashMap<usize, Vec<S>> = HashMap::new();
    let mut unit_sum = vec![S::zero(); dim];
    for &i in &normal_idx {
        let diff: Vec<S> = encodings[i]
            .iter()
            .zip(&center)
            .map(|(z, c)| *z - *c)
            .collect();
        let d = norm(&diff);
        loss += d / r;
        if d > S::zero() {
            let unit: Vec<S> = diff.iter().map(|v| *v / d).collect();
            for (s, u) in unit_sum.iter_mut().zip(&unit) {
                *s += *u;
            }
            units.insert(i, unit);
        }
    }

    let mut grads = vec![vec![S::zero(); dim]; encodings.len()];
    for &i in &normal_idx {
        let grad = &mut grads[i];
        if let Some(unit) = units.get(&i) {
            for (g, u) in grad.iter_mut().zip(unit) {
                *g += *u / r;
            }
        }
        for (g, s) in grad.iter_mut().zip(&unit_sum) {
            *g -= *s / (r * r0);
        }
    }
    Ok(SvddOutput {
        loss,
        center,
        grads,
    })
}

/// Per-anchor generated sets for the stage-2 loss. `similar` and `diverse`
/// carry `peer_index` values relative to [`malicious_peers`] of the anchor.
#[derive(Debug, Clone)]
pub struct AnchorGeneration<S> {
    pub anchor_index: usize,
    pub similar: Vec<GeneratedEncoding<S>>,
    pub diverse: Vec<GeneratedEncoding<S>>,
}

/// Stage-2 loss: malicious anchors among the members; candidates are the
/// batch minus the anchor plus that anchor's generated points; positives are
/// the malicious candidates plus the generated points. Generated points are
/// re-derived from their mix provenance, so gradients flow through them into
/// the real encodings.
pub fn stage2_loss<S: Scalar>(
    encodings: &[Vec<S>],
    labels: &[u8],
    members: usize,
    generated: &[AnchorGeneration<S>],
    alpha: S,
) -> Result<LossOutput<S>> {
    validate_batch(encodings, labels, members)?;
    if alpha <= S::zero() {
        return Err(Error::validation("temperature must be positive"));
    }
    let by_anchor: HashMap<usize, &AnchorGeneration<S>> =
        generated.iter().map(|g| (g.anchor_index, g)).collect();
    let n = encodings.len();
    let inv_r = S::one() / S::from_usize(members).unwrap();
    let mut out = LossOutput {
        loss: S::zero(),
        grads: vec![vec![S::zero(); encodings[0].len()]; n],
        pair_invocations: 0,
        skipped_anchors: 0,
    };

    for i in 0..members {
        if labels[i] != 1 {
            continue;
        }
        let peers = malicious_peers(labels, i);
        let mut candidates: Vec<CandidateRef<S>> = Vec::with_capacity(n - 1);
        let mut positives = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == 1 {
                positives.push(candidates.len());
            }
            candidates.push(CandidateRef::Real {
                z: encodings[j].as_slice(),
                batch_index: j,
            });
        }
        if let Some(gen) = by_anchor.get(&i) {
            for g in gen.similar.iter().chain(&gen.diverse) {
                let peer_batch = *peers.get(g.peer_index).ok_or_else(|| {
                    Error::validation(format!(
                        "generated point for anchor {i} references peer {} outside pool of {}",
                        g.peer_index,
                        peers.len()
                    ))
                })?;
                let z = mix(g.lambda, &encodings[i], &encodings[peer_batch]);
                debug_assert_eq!(z, g.z, "provenance must reproduce the generated point");
                positives.push(candidates.len());
                candidates.push(CandidateRef::Mixed {
                    z,
                    lambda: g.lambda,
                    anchor_index: i,
                    peer_index: peer_batch,
                });
            }
        }
        if positives.is_empty() {
            out.skipped_anchors += 1;
            continue;
        }
        out.pair_invocations += positives.len();
        let term = AnchorTerm {
            anchor: &encodings[i],
            anchor_index: i,
            candidates,
            positives,
        }
        .accumulate(alpha, inv_r, &mut out.grads)?;
        out.loss += inv_r * term;
    }
    Ok(out)
}
