//! Biased open-set train/test split construction.
//!
//! The training side sees malicious sessions from a strict subset of the
//! cluster ids ("seen" clusters); the test side draws from every cluster, so
//! evaluation covers behavior types absent from training.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::sessions::{SessionCorpus, SplitTag};

/// Per-side sample counts for [`make_openset_split`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_normal: usize,
    pub test_normal: usize,
    /// Malicious sessions per seen cluster placed in the training set.
    pub train_malicious: BTreeMap<u32, usize>,
    /// Malicious sessions per cluster placed in the test set.
    pub test_malicious: BTreeMap<u32, usize>,
}

/// Partition `corpus` into a biased training corpus and an open-set test
/// corpus. Training malicious sessions come only from `seen_clusters`; the
/// two sides never share a session.
pub fn make_openset_split(
    corpus: &SessionCorpus,
    seen_clusters: &HashSet<u32>,
    counts: &SplitCounts,
    seed: u64,
) -> Result<(SessionCorpus, SessionCorpus)> {
    for s in corpus.malicious() {
        if s.cluster_id.is_none() {
            return Err(Error::validation(format!(
                "malicious session `{}` has no cluster_id",
                s.id
            )));
        }
    }
    let all_clusters: HashSet<u32> = corpus.malicious_cluster_ids().into_iter().collect();
    if seen_clusters.is_empty() {
        return Err(Error::config("seen_clusters must be non-empty"));
    }
    if !seen_clusters.is_subset(&all_clusters) {
        return Err(Error::config(format!(
            "seen_clusters {:?} not present in corpus clusters {:?}",
            seen_clusters, all_clusters
        )));
    }
    if seen_clusters == &all_clusters {
        return Err(Error::config(
            "seen_clusters equals the full cluster set; no open-set condition",
        ));
    }
    if let Some(c) = counts.train_malicious.keys().find(|c| !seen_clusters.contains(c)) {
        return Err(Error::config(format!(
            "train_malicious requests cluster {c} outside seen_clusters"
        )));
    }

    let mut rng = rng_for(seed, "openset-split");

    // Normal sessions: shuffle once, take the train share then the test share.
    let mut normal_idx: Vec<usize> = (0..corpus.sessions.len())
        .filter(|&i| !corpus.sessions[i].is_malicious())
        .collect();
    if normal_idx.len() < counts.train_normal + counts.test_normal {
        return Err(Error::config(format!(
            "need {} normal sessions, corpus has {}",
            counts.train_normal + counts.test_normal,
            normal_idx.len()
        )));
    }
    normal_idx.shuffle(&mut rng);
    let train_set: HashSet<usize> = normal_idx[..counts.train_normal].iter().copied().collect();
    let test_set: HashSet<usize> = normal_idx
        [counts.train_normal..counts.train_normal + counts.test_normal]
        .iter()
        .copied()
        .collect();

    let mut train_pick = train_set;
    let mut test_pick = test_set;

    // Malicious sessions: per cluster, shuffle and carve train then test.
    let clusters: Vec<u32> = {
        let mut c: Vec<u32> = all_clusters.iter().copied().collect();
        c.sort_unstable();
        c
    };
    for cluster in clusters {
        let mut idx: Vec<usize> = (0..corpus.sessions.len())
            .filter(|&i| {
                corpus.sessions[i].is_malicious()
                    && corpus.sessions[i].cluster_id == Some(cluster)
            })
            .collect();
        idx.shuffle(&mut rng);
        let want_train = counts.train_malicious.get(&cluster).copied().unwrap_or(0);
        let want_test = counts.test_malicious.get(&cluster).copied().unwrap_or(0);
        if idx.len() < want_train + want_test {
            return Err(Error::config(format!(
                "cluster {cluster}: need {} sessions, corpus has {}",
                want_train + want_test,
                idx.len()
            )));
        }
        train_pick.extend(&idx[..want_train]);
        test_pick.extend(&idx[want_train..want_train + want_test]);
    }

    // Preserve corpus order inside each side.
    let collect = |picks: &HashSet<usize>, tag: SplitTag| -> Result<SessionCorpus> {
        let sessions = corpus
            .sessions
            .iter()
            .enumerate()
            .filter(|(i, _)| picks.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        SessionCorpus::new(sessions, tag)
    };
    let train = collect(&train_pick, SplitTag::Train)?;
    let test = collect(&test_pick, SplitTag::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::RawSession;

    fn corpus_with_clusters(n_normal: usize, per_cluster: &[usize]) -> SessionCorpus {
        let mut sessions = Vec::new();
        for i in 0..n_normal {
            sessions.push(RawSession::new(format!("n{i}"), vec!["a".into()], 0).unwrap());
        }
        for (c, &count) in per_cluster.iter().enumerate() {
            for i in 0..count {
                sessions.push(
                    RawSession::new(format!("m{c}-{i}"), vec!["x".into()], 1)
                        .unwrap()
                        .with_cluster(c as u32),
                );
            }
        }
        SessionCorpus::new(sessions, SplitTag::Train).unwrap()
    }

    fn default_counts() -> SplitCounts {
        SplitCounts {
            train_normal: 20,
            test_normal: 10,
            train_malicious: BTreeMap::from([(0, 3), (1, 3)]),
            test_malicious: BTreeMap::from([(0, 2), (1, 2), (2, 2), (3, 2), (4, 2)]),
        }
    }

    #[test]
    fn train_clusters_are_strict_subset_of_test_clusters() {
        let corpus = corpus_with_clusters(40, &[6, 6, 4, 4, 4]);
        let seen = HashSet::from([0, 1]);
        let (train, test) = make_openset_split(&corpus, &seen, &default_counts(), 5).unwrap();

        let train_clusters: HashSet<u32> =
            train.malicious_cluster_ids().into_iter().collect();
        let test_clusters: HashSet<u32> = test.malicious_cluster_ids().into_iter().collect();
        assert_eq!(train_clusters, seen);
        assert_eq!(test_clusters.len(), 5);
        assert!(train_clusters.is_subset(&test_clusters));
        assert_ne!(train_clusters, test_clusters);

        assert_eq!(train.normals().count(), 20);
        assert_eq!(test.normals().count(), 10);
        assert_eq!(train.malicious().count(), 6);
        assert_eq!(test.malicious().count(), 10);
    }

    #[test]
    fn sides_are_disjoint() {
        let corpus = corpus_with_clusters(40, &[6, 6, 4, 4, 4]);
        let (train, test) =
            make_openset_split(&corpus, &HashSet::from([0, 1]), &default_counts(), 11).unwrap();
        let train_ids: HashSet<&str> = train.sessions.iter().map(|s| s.id.as_str()).collect();
        assert!(test.sessions.iter().all(|s| !train_ids.contains(s.id.as_str())));
    }

    #[test]
    fn full_cluster_set_is_rejected() {
        let corpus = corpus_with_clusters(10, &[3, 3]);
        let err = make_openset_split(
            &corpus,
            &HashSet::from([0, 1]),
            &SplitCounts {
                train_normal: 5,
                test_normal: 2,
                train_malicious: BTreeMap::from([(0, 1)]),
                test_malicious: BTreeMap::from([(0, 1), (1, 1)]),
            },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn missing_cluster_id_is_rejected() {
        let mut corpus = corpus_with_clusters(5, &[2, 2]);
        corpus.sessions.push(RawSession::new("stray", vec!["x".into()], 1).unwrap());
        let err = make_openset_split(
            &corpus,
            &HashSet::from([0]),
            &SplitCounts {
                train_normal: 2,
                test_normal: 1,
                train_malicious: BTreeMap::from([(0, 1)]),
                test_malicious: BTreeMap::from([(1, 1)]),
            },
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("stray"));
    }
}
