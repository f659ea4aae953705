//! Synthetic open-set session corpus generator.
//!
//! Sessions are background activity streams with an injected motif: normal
//! sessions carry one of the shared normal motifs, malicious sessions
//! additionally carry their cluster's malicious motif somewhere in the
//! middle, so the stream reads normal - malicious - normal. Cluster motifs
//! in the default scenario are distinct recombinations of a shared malicious
//! token pool: unseen clusters use tokens the training vocabulary knows, in
//! orders it has never seen.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::sessions::{RawSession, SessionCorpus, SplitTag};
use crate::split::{make_openset_split, SplitCounts};

/// Corpus-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Size of the background activity vocabulary.
    pub vocab_size: usize,
    pub n_normal: usize,
    /// Malicious sessions per cluster; the length fixes the cluster count K.
    pub cluster_counts: Vec<usize>,
    pub t_min: usize,
    pub t_max: usize,
    pub normal_motifs: Vec<Vec<String>>,
    /// Per-cluster motif alternatives (each cluster needs at least one).
    pub malicious_motifs: Vec<Vec<Vec<String>>>,
    /// Per-position probability of replacing a token with a random one.
    pub noise_rate: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.n_normal == 0 {
            return Err(Error::validation(
                "vocab_size and n_normal must be positive",
            ));
        }
        if self.cluster_counts.len() < 2 {
            return Err(Error::validation("need at least 2 malicious clusters"));
        }
        if self.malicious_motifs.len() != self.cluster_counts.len() {
            return Err(Error::validation(
                "malicious_motifs must list one motif set per cluster",
            ));
        }
        if self.normal_motifs.is_empty()
            || self.normal_motifs.iter().any(|m| m.is_empty())
            || self
                .malicious_motifs
                .iter()
                .any(|ms| ms.is_empty() || ms.iter().any(|m| m.is_empty()))
        {
            return Err(Error::validation("motifs must be non-empty"));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::validation("need 1 <= t_min <= t_max"));
        }
        let longest = self
            .normal_motifs
            .iter()
            .chain(self.malicious_motifs.iter().flatten())
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        if longest > self.t_min {
            return Err(Error::validation(format!(
                "motif of length {longest} exceeds t_min={}",
                self.t_min
            )));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::validation("noise_rate must be in [0, 1)"));
        }
        Ok(())
    }

    fn background_token(&self, i: usize) -> String {
        format!("act_{i:03}")
    }

    /// Background plus every motif token, deduplicated in first-seen order.
    fn noise_pool(&self) -> Vec<String> {
        let mut pool: Vec<String> = (0..self.vocab_size)
            .map(|i| self.background_token(i))
            .collect();
        let mut seen: HashSet<String> = pool.iter().cloned().collect();
        for motif in self
            .normal_motifs
            .iter()
            .chain(self.malicious_motifs.iter().flatten())
        {
            for token in motif {
                if seen.insert(token.clone()) {
                    pool.push(token.clone());
                }
            }
        }
        pool
    }
}

/// Generate a labeled corpus; malicious sessions carry their cluster id.
/// Pure in `(spec, spec.seed)`: each session derives its own RNG stream.
pub fn generate(spec: &GeneratorSpec) -> Result<SessionCorpus> {
    spec.validate()?;
    let noise_pool = spec.noise_pool();
    let mut sessions = Vec::with_capacity(spec.n_normal + spec.cluster_counts.iter().sum::<usize>());

    for i in 0..spec.n_normal {
        let id = format!("norm-{i:05}");
        let mut rng = rng_for(spec.seed, &format!("synth/{id}"));
        let activities = build_session(spec, &noise_pool, None, &mut rng);
        sessions.push(RawSession {
            id,
            activities,
            label: 0,
            cluster_id: None,
        });
    }
    for (cluster, &count) in spec.cluster_counts.iter().enumerate() {
        for j in 0..count {
            let id = format!("mal-c{cluster}-{j:04}");
            let mut rng = rng_for(spec.seed, &format!("synth/{id}"));
            let activities = build_session(spec, &noise_pool, Some(cluster), &mut rng);
            sessions.push(RawSession {
                id,
                activities,
                label: 1,
                cluster_id: Some(cluster as u32),
            });
        }
    }
    SessionCorpus::new(sessions, SplitTag::Train)
}

fn build_session<R: Rng>(
    spec: &GeneratorSpec,
    noise_pool: &[String],
    cluster: Option<usize>,
    rng: &mut R,
) -> Vec<String> {
    let len = rng.gen_range(spec.t_min..=spec.t_max);
    let mut tokens: Vec<String> = (0..len)
        .map(|_| spec.background_token(rng.gen_range(0..spec.vocab_size)))
        .collect();

    let normal_motif = &spec.normal_motifs[rng.gen_range(0..spec.normal_motifs.len())];
    let start = rng.gen_range(0..=len - normal_motif.len());
    tokens[start..start + normal_motif.len()].clone_from_slice(normal_motif);

    if let Some(c) = cluster {
        let motifs = &spec.malicious_motifs[c];
        let motif = &motifs[rng.gen_range(0..motifs.len())];
        // Keep at least one normal token on each side when the length allows.
        let (lo, hi) = if len >= motif.len() + 2 {
            (1, len - motif.len() - 1)
        } else {
            (0, len - motif.len())
        };
        let start = rng.gen_range(lo..=hi);
        tokens[start..start + motif.len()].clone_from_slice(motif);
    }

    for slot in tokens.iter_mut() {
        if rng.gen::<f64>() < spec.noise_rate {
            *slot = noise_pool[rng.gen_range(0..noise_pool.len())].clone();
        }
    }
    tokens
}

/// A generator plus the open-set split applied to its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub generator: GeneratorSpec,
    pub seen_clusters: Vec<u32>,
    pub counts: SplitCounts,
}

/// Generate a corpus and split it into biased train / open-set test sides.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(SessionCorpus, SessionCorpus)> {
    let corpus = generate(&spec.generator)?;
    let seen: HashSet<u32> = spec.seen_clusters.iter().copied().collect();
    make_openset_split(&corpus, &seen, &spec.counts, spec.generator.seed)
}

/// The benchmark scenario: five malicious clusters over a shared malicious
/// token pool, training on clusters 0 and 1 only.
///
/// The seen clusters carry strong four-token malicious motifs. The unseen
/// clusters blend two known malicious tokens with ordinary background
/// activity in combinations absent from training, so their sessions sit near
/// the normal region after stage-1 training and only the augmented stage-2
/// encoder separates them.
///
/// Train: 1,000 normal + 30 malicious (15 each from clusters 0 and 1).
/// Test: 300 normal + 100 malicious (20 from each of the 5 clusters).
pub fn default_scenario_spec(seed: u64) -> ScenarioSpec {
    let mal = |i: usize| format!("mal_{i}");
    let act = |i: usize| format!("act_{i:03}");
    let generator = GeneratorSpec {
        vocab_size: 40,
        n_normal: 1300,
        cluster_counts: vec![35, 35, 20, 20, 20],
        t_min: 6,
        t_max: 10,
        normal_motifs: vec![
            vec![act(0), act(1), act(2)],
            vec![act(10), act(11), act(12)],
            vec![act(20), act(21), act(22)],
        ],
        malicious_motifs: vec![
            vec![vec![mal(0), mal(1), mal(2), mal(3)]],
            vec![vec![mal(4), mal(5), mal(6), mal(7)]],
            vec![vec![mal(1), act(5), mal(6), act(17)]],
            vec![vec![act(33), mal(2), act(9), mal(7)]],
            vec![vec![mal(5), act(21), mal(0), act(28)]],
        ],
        noise_rate: 0.03,
        seed,
    };
    ScenarioSpec {
        generator,
        seen_clusters: vec![0, 1],
        counts: SplitCounts {
            train_normal: 1000,
            test_normal: 300,
            train_malicious: [(0, 15), (1, 15)].into_iter().collect(),
            test_malicious: (0..5).map(|c| (c, 20)).collect(),
        },
    }
}

/// Convenience wrapper over [`generate_scenario`] with the default spec.
pub fn default_openset_scenario(seed: u64) -> Result<(SessionCorpus, SessionCorpus)> {
    generate_scenario(&default_scenario_spec(seed))
}
