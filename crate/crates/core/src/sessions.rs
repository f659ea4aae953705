//! Session data model, JSONL corpus I/O, and training-batch construction.
//!
//! A session is an ordered sequence of activity tokens with a binary label
//! (0 = normal, 1 = malicious). Corpora are stored one JSON object per line
//! with fields `id`, `activities`, `label`, and optional `cluster_id`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const LABEL_NORMAL: u8 = 0;
pub const LABEL_MALICIOUS: u8 = 1;

/// One activity session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSession {
    pub id: String,
    pub activities: Vec<String>,
    pub label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
}

impl RawSession {
    pub fn new(id: impl Into<String>, activities: Vec<String>, label: u8) -> Result<Self> {
        let session = RawSession {
            id: id.into(),
            activities,
            label,
            cluster_id: None,
        };
        session.validate()?;
        Ok(session)
    }

    pub fn with_cluster(mut self, cluster_id: u32) -> Self {
        self.cluster_id = Some(cluster_id);
        self
    }

    pub fn is_malicious(&self) -> bool {
        self.label == LABEL_MALICIOUS
    }

    /// Number of activities `T`.
    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.activities.is_empty() {
            return Err(Error::validation(format!(
                "session `{}` has an empty activity list",
                self.id
            )));
        }
        if self.activities.iter().any(|a| a.is_empty()) {
            return Err(Error::validation(format!(
                "session `{}` contains an empty activity token",
                self.id
            )));
        }
        if self.label > 1 {
            return Err(Error::validation(format!(
                "session `{}` has label {} outside {{0, 1}}",
                self.id, self.label
            )));
        }
        Ok(())
    }
}

/// Which side of a train/test split a corpus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// A collection of sessions with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<RawSession>,
    pub split_tag: SplitTag,
}

impl SessionCorpus {
    pub fn new(sessions: Vec<RawSession>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sessions.len());
        for s in &sessions {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(format!("duplicate session id `{}`", s.id)));
            }
        }
        Ok(SessionCorpus { sessions, split_tag })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn normals(&self) -> impl Iterator<Item = &RawSession> {
        self.sessions.iter().filter(|s| !s.is_malicious())
    }

    pub fn malicious(&self) -> impl Iterator<Item = &RawSession> {
        self.sessions.iter().filter(|s| s.is_malicious())
    }

    /// Distinct cluster ids present on malicious sessions, ascending.
    pub fn malicious_cluster_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .malicious()
            .filter_map(|s| s.cluster_id)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Read a JSONL corpus. Malformed lines report their 1-based line number;
/// invariant violations report the offending session id.
pub fn ingest_corpus(path: impl AsRef<Path>, split_tag: SplitTag) -> Result<SessionCorpus> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut sessions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let session: RawSession = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        sessions.push(session);
    }
    SessionCorpus::new(sessions, split_tag)
}

/// Write a corpus in the JSONL format accepted by [`ingest_corpus`].
pub fn write_corpus(corpus: &SessionCorpus, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for session in &corpus.sessions {
        serde_json::to_writer(&mut writer, session).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// One training batch: `R` member sessions plus `M` auxiliary malicious ones.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub members: Vec<RawSession>,
    pub auxiliary: Vec<RawSession>,
}

/// Build one epoch of batches.
///
/// Members are a seeded shuffle of the full training set chunked into groups
/// of `r` (the final batch may be smaller), so every session appears exactly
/// once per epoch. The auxiliary group is `m` draws with replacement from the
/// malicious subset, re-sampled for every batch.
pub fn make_batches(
    train: &SessionCorpus,
    r: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<TrainingBatch>> {
    if r == 0 || m == 0 {
        return Err(Error::config("batch sizes R and M must be positive"));
    }
    if r > train.len() {
        return Err(Error::config(format!(
            "batch size R={} exceeds training set size {}",
            r,
            train.len()
        )));
    }
    let malicious: Vec<&RawSession> = train.malicious().collect();
    if malicious.is_empty() {
        return Err(Error::config("no malicious sessions in training set"));
    }

    let mut rng = rng_for(seed, "batches");
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);

    let mut batches = Vec::with_capacity(order.len().div_ceil(r));
    for chunk in order.chunks(r) {
        let members = chunk.iter().map(|&i| train.sessions[i].clone()).collect();
        let auxiliary = (0..m)
            .map(|_| malicious[rng.gen_range(0..malicious.len())].clone())
            .collect();
        batches.push(TrainingBatch { members, auxiliary });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str, label: u8) -> RawSession {
        RawSession::new(id, vec!["a".into(), "b".into()], label).unwrap()
    }

    fn mixed_corpus(n_normal: usize, n_malicious: usize) -> SessionCorpus {
        let mut sessions = Vec::new();
        for i in 0..n_normal {
            sessions.push(session(&format!("n{i}"), 0));
        }
        for i in 0..n_malicious {
            sessions.push(session(&format!("m{i}"), 1));
        }
        SessionCorpus::new(sessions, SplitTag::Train).unwrap()
    }

    #[test]
    fn ingest_three_valid_records() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"s1","activities":["login","read"],"label":0}}"#).unwrap();
        writeln!(
            f,
            r#"{{"id":"s2","activities":["login","exfil"],"label":1,"cluster_id":3}}"#
        )
        .unwrap();
        writeln!(f, r#"{{"id":"s3","activities":["logout"],"label":0}}"#).unwrap();
        let corpus = ingest_corpus(f.path(), SplitTag::Train).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.sessions[1].cluster_id, Some(3));
    }

    #[test]
    fn ingest_rejects_label_outside_domain() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"s1","activities":["a"],"label":2}}"#).unwrap();
        let err = ingest_corpus(f.path(), SplitTag::Train).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains("s1"));
    }

    #[test]
    fn ingest_rejects_empty_activities() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"sX","activities":[],"label":0}}"#).unwrap();
        let err = ingest_corpus(f.path(), SplitTag::Train).unwrap_err();
        assert!(err.to_string().contains("sX"));
    }

    #[test]
    fn ingest_reports_line_number_for_malformed_json() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"s1","activities":["a"],"label":0}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = ingest_corpus(f.path(), SplitTag::Train).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err =
            SessionCorpus::new(vec![session("dup", 0), session("dup", 1)], SplitTag::Train)
                .unwrap_err();
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn corpus_roundtrip_is_identical() {
        let corpus = mixed_corpus(5, 2);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&corpus, f.path()).unwrap();
        let back = ingest_corpus(f.path(), SplitTag::Train).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn batches_cover_every_session_once_per_epoch() {
        let corpus = mixed_corpus(23, 4);
        let batches = make_batches(&corpus, 10, 3, 99).unwrap();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].members.len(), 7);
        let mut ids: Vec<&str> = batches
            .iter()
            .flat_map(|b| b.members.iter().map(|s| s.id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), corpus.len());
        for b in &batches {
            assert_eq!(b.auxiliary.len(), 3);
            assert!(b.auxiliary.iter().all(|s| s.is_malicious()));
        }
    }

    #[test]
    fn full_size_batch_is_single() {
        let corpus = mixed_corpus(90, 10);
        let batches = make_batches(&corpus, 100, 5, 1).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].members.len(), 100);
    }

    #[test]
    fn batching_is_deterministic_under_seed() {
        let corpus = mixed_corpus(30, 5);
        let a = make_batches(&corpus, 8, 2, 7).unwrap();
        let b = make_batches(&corpus, 8, 2, 7).unwrap();
        let ids = |bs: &[TrainingBatch]| -> Vec<String> {
            bs.iter()
                .flat_map(|b| {
                    b.members
                        .iter()
                        .chain(b.auxiliary.iter())
                        .map(|s| s.id.clone())
                })
                .collect()
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn batches_require_malicious_sessions() {
        let corpus = mixed_corpus(10, 0);
        let err = make_batches(&corpus, 5, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
