//! Activity-token embeddings trained with skip-gram negative sampling.
//!
//! Sessions are treated as sentences; each activity token gets a
//! `dim`-dimensional vector. The table is the input-side matrix of the
//! skip-gram model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::seeding::rng_for;
use crate::sessions::{RawSession, SessionCorpus};

/// Skip-gram training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub min_frequency: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 50,
            min_frequency: 1,
            window: 5,
            negative: 5,
            epochs: 5,
            learning_rate: 0.025,
        }
    }
}

/// Token -> vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S> {
    dim: usize,
    min_frequency: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<S>>,
    index: HashMap<String, usize>,
}

/// How to embed a token that has no table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// Substitute the zero vector.
    #[default]
    Zero,
    /// Fail with the offending token.
    Strict,
}

/// A session expanded into its per-activity vectors (the raw representation).
#[derive(Debug, Clone)]
pub struct EmbeddedSession<S> {
    pub id: String,
    pub label: u8,
    pub vectors: Vec<Vec<S>>,
}

impl<S: Scalar> EmbeddingTable<S> {
    fn from_parts(
        dim: usize,
        min_frequency: usize,
        tokens: Vec<String>,
        vectors: Vec<Vec<S>>,
    ) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        EmbeddingTable {
            dim,
            min_frequency,
            tokens,
            vectors,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn get(&self, token: &str) -> Option<&[S]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    /// Tokens in table order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Embed one session: a length-`T` list of `dim`-vectors.
    pub fn embed_session(&self, session: &RawSession, policy: OovPolicy) -> Result<Vec<Vec<S>>> {
        if session.is_empty() {
            return Err(Error::validation(format!(
                "session `{}` has no activities to embed",
                session.id
            )));
        }
        session
            .activities
            .iter()
            .map(|token| match self.get(token) {
                Some(v) => Ok(v.to_vec()),
                None => match policy {
                    OovPolicy::Zero => Ok(vec![S::zero(); self.dim]),
                    OovPolicy::Strict => Err(Error::UnknownToken(token.clone())),
                },
            })
            .collect()
    }

    /// Embed every session of a corpus in corpus order.
    pub fn embed_corpus(
        &self,
        corpus: &SessionCorpus,
        policy: OovPolicy,
    ) -> Result<Vec<EmbeddedSession<S>>> {
        corpus
            .sessions
            .iter()
            .map(|s| {
                Ok(EmbeddedSession {
                    id: s.id.clone(),
                    label: s.label,
                    vectors: self.embed_session(s, policy)?,
                })
            })
            .collect()
    }

    /// Write the table: a JSON header line followed by one
    /// `token<TAB>v1 v2 ... vd` line per token.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "{}",
            serde_json::json!({"dim": self.dim, "vocab_size": self.vocab_size(), "min_frequency": self.min_frequency})
        )?;
        for (token, vector) in self.tokens.iter().zip(&self.vectors) {
            write!(w, "{token}\t")?;
            for (i, v) in vector.iter().enumerate() {
                if i > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().ok_or_else(|| Error::Format {
            kind: "embedding table",
            message: "missing header line".into(),
        })??;
        #[derive(Deserialize)]
        struct Header {
            dim: usize,
            vocab_size: usize,
            #[serde(default = "default_min_frequency")]
            min_frequency: usize,
        }
        fn default_min_frequency() -> usize {
            1
        }
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Format {
            kind: "embedding table",
            message: format!("bad header: {e}"),
        })?;
        let mut tokens = Vec::with_capacity(header.vocab_size);
        let mut vectors = Vec::with_capacity(header.vocab_size);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, rest) = line.split_once('\t').ok_or_else(|| Error::Format {
                kind: "embedding table",
                message: format!("line {}: missing tab separator", lineno + 2),
            })?;
            let vector: Vec<S> = rest
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map(S::from_config)
                        .map_err(|e| Error::Format {
                            kind: "embedding table",
                            message: format!("line {}: {e}", lineno + 2),
                        })
                })
                .collect::<Result<_>>()?;
            if vector.len() != header.dim {
                return Err(Error::Format {
                    kind: "embedding table",
                    message: format!(
                        "line {}: expected {} values, got {}",
                        lineno + 2,
                        header.dim,
                        vector.len()
                    ),
                });
            }
            tokens.push(token.to_string());
            vectors.push(vector);
        }
        if tokens.len() != header.vocab_size {
            return Err(Error::Format {
                kind: "embedding table",
                message: format!(
                    "header claims {} tokens, file has {}",
                    header.vocab_size,
                    tokens.len()
                ),
            });
        }
        Ok(Self::from_parts(
            header.dim,
            header.min_frequency,
            tokens,
            vectors,
        ))
    }

    /// Content hash used to tie checkpoints to the table they were trained with.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.dim.to_le_bytes());
        for (token, vector) in self.tokens.iter().zip(&self.vectors) {
            hasher.update(token.as_bytes());
            hasher.update([0u8]);
            for v in vector {
                hasher.update(v.to_report().to_le_bytes());
            }
        }
        hex_digest(&hasher.finalize())
    }

    /// Raw accessors used by checkpoint serialization.
    pub fn to_rows(&self) -> Vec<(String, Vec<f64>)> {
        self.tokens
            .iter()
            .zip(&self.vectors)
            .map(|(t, v)| (t.clone(), v.iter().map(|x| x.to_report()).collect()))
            .collect()
    }

    pub fn from_rows(dim: usize, min_frequency: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len());
        for (token, values) in rows {
            if values.len() != dim {
                return Err(Error::validation(format!(
                    "token `{token}` has {} values, expected {dim}",
                    values.len()
                )));
            }
            tokens.push(token);
            vectors.push(values.into_iter().map(S::from_config).collect());
        }
        Ok(Self::from_parts(dim, min_frequency, tokens, vectors))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train activity embeddings on a corpus with skip-gram negative sampling
/// (window 5, 5 negatives, 5 epochs by default). Deterministic under `seed`.
pub fn train_activity_embeddings<S: Scalar>(
    corpus: &SessionCorpus,
    config: &EmbeddingConfig,
    seed: u64,
) -> Result<EmbeddingTable<S>> {
    if config.dim == 0 {
        return Err(Error::validation("embedding dim must be positive"));
    }
    if config.min_frequency == 0 {
        return Err(Error::validation("min_frequency must be positive"));
    }
    if corpus.is_empty() {
        return Err(Error::validation("cannot train embeddings on empty corpus"));
    }

    // Vocabulary: tokens at or above the frequency floor, most frequent first.
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for session in &corpus.sessions {
        for token in &session.activities {
            *counts.entry(token.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_frequency)
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if vocab.is_empty() {
        return Err(Error::validation(
            "no token meets the min_frequency threshold",
        ));
    }
    let token_index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, &(t, _))| (t, i))
        .collect();
    let vocab_size = vocab.len();
    let dim = config.dim;

    // Sessions as in-vocabulary index streams.
    let streams: Vec<Vec<usize>> = corpus
        .sessions
        .iter()
        .map(|s| {
            s.activities
                .iter()
                .filter_map(|t| token_index.get(t.as_str()).copied())
                .collect()
        })
        .collect();

    // Unigram^(3/4) cumulative weights for negative sampling.
    let cumulative: Vec<f64> = {
        let mut acc = 0.0;
        vocab
            .iter()
            .map(|&(_, c)| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect()
    };
    let total_weight = *cumulative.last().unwrap();

    let mut rng = rng_for(seed, "word2vec");
    let span = 0.5 / dim as f64;
    let mut input: Vec<Vec<f64>> = (0..vocab_size)
        .map(|_| (0..dim).map(|_| rng.gen_range(-span..span)).collect())
        .collect();
    let mut output: Vec<Vec<f64>> = vec![vec![0.0; dim]; vocab_size];

    let lr = config.learning_rate;
    let mut scratch = vec![0.0f64; dim];
    for _epoch in 0..config.epochs {
        for stream in &streams {
            for (pos, &center) in stream.iter().enumerate() {
                let reach = rng.gen_range(1..=config.window) as isize;
                for offset in -reach..=reach {
                    if offset == 0 {
                        continue;
                    }
                    let ctx_pos = pos as isize + offset;
                    if ctx_pos < 0 || ctx_pos >= stream.len() as isize {
                        continue;
                    }
                    let context = stream[ctx_pos as usize];
                    scratch.iter_mut().for_each(|v| *v = 0.0);
                    for neg in 0..=config.negative {
                        let (target, label) = if neg == 0 {
                            (context, 1.0)
                        } else {
                            let draw = rng.gen::<f64>() * total_weight;
                            let t = cumulative.partition_point(|&c| c < draw).min(vocab_size - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let f = dot(&input[center], &output[target]);
                        let g = (label - sigmoid(f)) * lr;
                        for d in 0..dim {
                            scratch[d] += g * output[target][d];
                            output[target][d] += g * input[center][d];
                        }
                    }
                    for d in 0..dim {
                        input[center][d] += scratch[d];
                    }
                }
            }
        }
    }

    let tokens: Vec<String> = vocab.iter().map(|&(t, _)| t.to_string()).collect();
    let vectors: Vec<Vec<S>> = input
        .into_iter()
        .map(|v| v.into_iter().map(S::from_config).collect())
        .collect();
    Ok(EmbeddingTable::from_parts(
        dim,
        config.min_frequency,
        tokens,
        vectors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cosine;
    use crate::sessions::SplitTag;

    fn corpus_of(lines: &[&[&str]]) -> SessionCorpus {
        let sessions = lines
            .iter()
            .enumerate()
            .map(|(i, toks)| {
                RawSession::new(
                    format!("s{i}"),
                    toks.iter().map(|t| t.to_string()).collect(),
                    0,
                )
                .unwrap()
            })
            .collect();
        SessionCorpus::new(sessions, SplitTag::Train).unwrap()
    }

    #[test]
    fn single_token_vocabulary() {
        let corpus = corpus_of(&[&["only"], &["only", "only"]]);
        let table: EmbeddingTable<f64> =
            train_activity_embeddings(&corpus, &EmbeddingConfig::default(), 1).unwrap();
        assert_eq!(table.vocab_size(), 1);
        assert_eq!(table.get("only").unwrap().len(), 50);
    }

    #[test]
    fn default_config_matches_expected_values() {
        let c = EmbeddingConfig::default();
        assert_eq!(c.dim, 50);
        assert_eq!(c.min_frequency, 1);
        assert_eq!(c.window, 5);
        assert_eq!(c.negative, 5);
        assert_eq!(c.epochs, 5);
    }

    #[test]
    fn cooccurring_tokens_end_up_closer() {
        // A and B always co-occur (and share surrounding context); C never
        // appears with A.
        let mut lines: Vec<&[&str]> = Vec::new();
        for _ in 0..40 {
            lines.push(&["u", "A", "B", "v"]);
            lines.push(&["v", "B", "A", "w"]);
            lines.push(&["w", "A", "B", "u"]);
            lines.push(&["p", "C", "D", "q"]);
            lines.push(&["q", "D", "C", "r"]);
            lines.push(&["r", "C", "D", "p"]);
        }
        let corpus = corpus_of(&lines);

        // Oracle: PMI from raw co-occurrence counts (window covers the pair).
        let mut pair = HashMap::new();
        let mut single = HashMap::new();
        for s in &corpus.sessions {
            for t in &s.activities {
                *single.entry(t.clone()).or_insert(0usize) += 1;
            }
            for i in 0..s.activities.len() {
                for j in 0..s.activities.len() {
                    if i != j {
                        *pair
                            .entry((s.activities[i].clone(), s.activities[j].clone()))
                            .or_insert(0usize) += 1;
                    }
                }
            }
        }
        let pmi = |a: &str, b: &str| -> f64 {
            let joint = *pair.get(&(a.to_string(), b.to_string())).unwrap_or(&0);
            if joint == 0 {
                return f64::NEG_INFINITY;
            }
            ((joint * single.len()) as f64 / (single[a] * single[b]) as f64).ln()
        };
        assert!(pmi("A", "B") > pmi("A", "C"));

        let table: EmbeddingTable<f64> =
            train_activity_embeddings(&corpus, &EmbeddingConfig::default(), 5).unwrap();
        let cos_ab = cosine(table.get("A").unwrap(), table.get("B").unwrap()).unwrap();
        let cos_ac = cosine(table.get("A").unwrap(), table.get("C").unwrap()).unwrap();
        assert!(
            cos_ab > cos_ac,
            "expected cos(A,B)={cos_ab} > cos(A,C)={cos_ac}"
        );
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let corpus = corpus_of(&[&["a", "b", "c"], &["b", "c", "d"], &["a", "d"]]);
        let t1: EmbeddingTable<f64> =
            train_activity_embeddings(&corpus, &EmbeddingConfig::default(), 9).unwrap();
        let t2: EmbeddingTable<f64> =
            train_activity_embeddings(&corpus, &EmbeddingConfig::default(), 9).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn embed_session_shapes_and_oov() {
        let corpus = corpus_of(&[&["a", "b"], &["a", "b", "c"]]);
        let cfg = EmbeddingConfig {
            dim: 8,
            ..EmbeddingConfig::default()
        };
        let table: EmbeddingTable<f64> = train_activity_embeddings(&corpus, &cfg, 2).unwrap();

        let one = RawSession::new("one", vec!["a".into()], 0).unwrap();
        let embedded = table.embed_session(&one, OovPolicy::Zero).unwrap();
        assert_eq!(embedded.len(), 1);
        assert_eq!(embedded[0], table.get("a").unwrap().to_vec());

        let four = RawSession::new(
            "four",
            vec!["a".into(), "b".into(), "c".into(), "a".into()],
            0,
        )
        .unwrap();
        let embedded = table.embed_session(&four, OovPolicy::Zero).unwrap();
        assert_eq!(embedded.len(), 4);
        assert!(embedded.iter().all(|v| v.len() == 8));

        let oov = RawSession::new("oov", vec!["zzz".into()], 0).unwrap();
        let zeroed = table.embed_session(&oov, OovPolicy::Zero).unwrap();
        assert_eq!(zeroed[0], vec![0.0; 8]);
        let err = table.embed_session(&oov, OovPolicy::Strict).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn save_load_roundtrip() {
        let corpus = corpus_of(&[&["a", "b", "c"], &["c", "d"]]);
        let cfg = EmbeddingConfig {
            dim: 6,
            ..EmbeddingConfig::default()
        };
        let table: EmbeddingTable<f64> = train_activity_embeddings(&corpus, &cfg, 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        table.save(f.path()).unwrap();
        let back = EmbeddingTable::<f64>::load(f.path()).unwrap();
        assert_eq!(table, back);
        assert_eq!(table.content_hash(), back.content_hash());
    }

    #[test]
    fn zero_dim_rejected() {
        let corpus = corpus_of(&[&["a"]]);
        let cfg = EmbeddingConfig {
            dim: 0,
            ..EmbeddingConfig::default()
        };
        assert!(train_activity_embeddings::<f64>(&corpus, &cfg, 0).is_err());
    }
}
