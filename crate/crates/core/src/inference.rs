//! Label prediction, evaluation, the coverage probe, and encoding export.
//!
//! A session is predicted malicious exactly when its encoding is strictly
//! closer to the malicious center `v1` than to the normal center `v0`; ties
//! fall to normal. The continuous anomaly score is the margin `d0 - d1`,
//! whose sign reproduces the hard rule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::scalar::{distance, Scalar};
use crate::sessions::{RawSession, SessionCorpus};
use crate::training::TrainedModel;

/// Per-session prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: String,
    pub predicted: u8,
    /// `d0 - d1`; positive means malicious.
    pub score: f64,
    pub d0: f64,
    pub d1: f64,
}

/// Predict one session's label under the frozen model.
pub fn predict<S: Scalar>(model: &TrainedModel<S>, session: &RawSession) -> Result<Prediction> {
    if session.is_empty() {
        return Err(Error::validation(format!(
            "session `{}` has no activities",
            session.id
        )));
    }
    let z = model.encode_session(session)?;
    let (d0, d1) = model.center_distances(&z);
    let predicted = u8::from(d1 < d0);
    Ok(Prediction {
        session_id: session.id.clone(),
        predicted,
        score: (d0 - d1).to_report(),
        d0: d0.to_report(),
        d1: d1.to_report(),
    })
}

/// Evaluate a labeled corpus: hard-rule confusion counts plus rank AUC over
/// the margin score.
pub fn evaluate<S: Scalar>(
    model: &TrainedModel<S>,
    test: &SessionCorpus,
) -> Result<MetricsReport> {
    let rows: Vec<(u8, u8, f64)> = test
        .sessions
        .iter()
        .map(|session| {
            let p = predict(model, session)?;
            Ok((session.label, p.predicted, p.score))
        })
        .collect::<Result<_>>()?;
    MetricsReport::compute(&rows)
}

/// Empirical coverage probe: the fraction of test malicious encodings that
/// have some reference point within `epsilon` (Euclidean) whose prediction
/// side (closer to `v1` than to `v0`) agrees with theirs. Returns 0 with an
/// empty reference set.
pub fn epsilon_span_coverage<S: Scalar>(
    model: &TrainedModel<S>,
    test_malicious: &[Vec<S>],
    reference: &[Vec<S>],
    epsilon: f64,
) -> Result<f64> {
    if epsilon < 0.0 {
        return Err(Error::validation("epsilon must be non-negative"));
    }
    if test_malicious.is_empty() {
        return Err(Error::validation("no test malicious encodings"));
    }
    if reference.is_empty() {
        return Ok(0.0);
    }
    let eps = S::from_config(epsilon);
    let side = |z: &[S]| -> bool {
        let (d0, d1) = model.center_distances(z);
        d1 < d0
    };
    let reference_sides: Vec<bool> = reference.iter().map(|z| side(z)).collect();
    let covered = test_malicious
        .iter()
        .filter(|z| {
            let z_side = side(z);
            reference
                .iter()
                .zip(&reference_sides)
                .any(|(r, &r_side)| r_side == z_side && distance(z, r) <= eps)
        })
        .count();
    Ok(covered as f64 / test_malicious.len() as f64)
}

/// Export per-session encodings as CSV: `session_id, label, z0..z{d-1}, d0, d1`.
pub fn export_encodings<S: Scalar>(
    model: &TrainedModel<S>,
    corpus: &SessionCorpus,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    let dim = model.encoder.config().hidden_dim;
    let mut header = vec!["session_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("z{i}")));
    header.push("d0".into());
    header.push("d1".into());
    writer.write_record(&header).map_err(csv_error)?;
    for session in &corpus.sessions {
        let z = model.encode_session(session)?;
        let (d0, d1) = model.center_distances(&z);
        let mut row = vec![session.id.clone(), session.label.to_string()];
        row.extend(z.iter().map(|v| v.to_report().to_string()));
        row.push(d0.to_report().to_string());
        row.push(d1.to_report().to_string());
        writer.write_record(&row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{train_activity_embeddings, EmbeddingConfig, EmbeddingTable};
    use crate::encoder::{EncoderConfig, LstmEncoder};
    use crate::sessions::SplitTag;
    use crate::training::{TrainConfig, TrainedModel, TrainingSummary};

    /// A model with hand-placed centers; the encoder itself is irrelevant for
    /// rule-level tests, which probe distances directly.
    fn toy_model(v0: Vec<f64>, v1: Vec<f64>) -> TrainedModel<f64> {
        let corpus = SessionCorpus::new(
            vec![
                RawSession::new("a", vec!["x".into(), "y".into()], 0).unwrap(),
                RawSession::new("b", vec!["y".into(), "z".into()], 1).unwrap(),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let dim = v0.len();
        let table: EmbeddingTable<f64> = train_activity_embeddings(
            &corpus,
            &EmbeddingConfig {
                dim,
                ..EmbeddingConfig::default()
            },
            1,
        )
        .unwrap();
        let encoder = LstmEncoder::new(EncoderConfig {
            input_dim: dim,
            hidden_dim: dim,
            num_layers: 1,
            seed: 7,
        })
        .unwrap();
        TrainedModel {
            encoder,
            table,
            v0,
            v1,
            radius: 0.5,
            config: TrainConfig::default(),
            summary: TrainingSummary {
                stage1_ran: true,
                stage2_ran: true,
                optimizer_steps_stage1: 0,
                optimizer_steps_stage2: 0,
                n_train_sessions: 2,
                n_malicious_train: 1,
                embedding_hash: String::new(),
            },
        }
    }

    #[test]
    fn equidistant_encoding_predicts_normal() {
        let model = toy_model(vec![1.0, 0.0], vec![-1.0, 0.0]);
        // Any session whose encoding lands equidistant is normal; probe the
        // rule directly through center_distances on a symmetric point.
        let z = vec![0.0, 3.0];
        let (d0, d1) = model.center_distances(&z);
        assert_eq!(d0, d1);
        assert_eq!(u8::from(d1 < d0), 0);
    }

    #[test]
    fn predictions_follow_the_distance_rule() {
        let model = toy_model(vec![5.0, 5.0], vec![-5.0, -5.0]);
        let session = RawSession::new("t", vec!["x".into(), "y".into()], 1).unwrap();
        let p = predict(&model, &session).unwrap();
        let z = model.encode_session(&session).unwrap();
        let (d0, d1) = model.center_distances(&z);
        assert_eq!(p.predicted, u8::from(d1 < d0));
        assert!((p.score - (d0 - d1)).abs() < 1e-15);
        // Score sign reproduces the rule.
        assert_eq!(p.predicted == 1, p.score > 0.0);
    }

    #[test]
    fn coverage_probe_brute_force_layout() {
        let model = toy_model(vec![0.0, 0.0], vec![10.0, 0.0]);
        // Test points: two on the malicious side, one on the normal side.
        let test = vec![vec![9.0, 0.0], vec![8.0, 0.5], vec![1.0, 0.0]];
        // References: one malicious-side point near the first two, one
        // normal-side point far from the third.
        let reference = vec![vec![8.5, 0.0], vec![2.5, 0.0]];
        // eps = 1: test[0] is 0.5 from ref[0] (same side) -> covered;
        // test[1] is ~0.707 from ref[0] (same side) -> covered;
        // test[2] is 1.5 from ref[1] -> not covered.
        let c = epsilon_span_coverage(&model, &test, &reference, 1.0).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-12);

        // Exhaustive pairwise oracle at several radii.
        for eps in [0.0, 0.4, 0.8, 1.6, 3.0, 10.0] {
            let side = |z: &[f64]| {
                let (d0, d1) = model.center_distances(z);
                d1 < d0
            };
            let expected = test
                .iter()
                .filter(|t| {
                    reference.iter().any(|r| {
                        side(r) == side(t)
                            && t.iter()
                                .zip(r)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                .sqrt()
                                <= eps
                    })
                })
                .count() as f64
                / test.len() as f64;
            let got = epsilon_span_coverage(&model, &test, &reference, eps).unwrap();
            assert_eq!(got, expected, "eps={eps}");
        }
    }

    #[test]
    fn coverage_identity_and_empty_reference() {
        let model = toy_model(vec![0.0, 0.0], vec![10.0, 0.0]);
        let test = vec![vec![9.0, 0.0], vec![7.0, 1.0]];
        let c = epsilon_span_coverage(&model, &test, &test.clone(), 0.0).unwrap();
        assert_eq!(c, 1.0);
        let c = epsilon_span_coverage(&model, &test, &[], 1.0).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn coverage_is_monotone_in_epsilon() {
        let model = toy_model(vec![0.0, 0.0], vec![4.0, 0.0]);
        let test: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 / 2.0, (i % 3) as f64])
            .collect();
        let reference: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.5]).collect();
        let mut last = 0.0;
        for i in 0..10 {
            let eps = i as f64 * 0.35;
            let c = epsilon_span_coverage(&model, &test, &reference, eps).unwrap();
            assert!(c >= last, "coverage decreased at eps={eps}");
            last = c;
        }
    }

    #[test]
    fn export_roundtrip() {
        let model = toy_model(vec![0.0, 0.0], vec![1.0, 1.0]);
        let corpus = SessionCorpus::new(
            vec![
                RawSession::new("s1", vec!["x".into()], 0).unwrap(),
                RawSession::new("s2", vec!["y".into(), "x".into()], 1).unwrap(),
            ],
            SplitTag::Test,
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        export_encodings(&model, &corpus, file.path()).unwrap();

        let mut reader = csv::Reader::from_path(file.path()).unwrap();
        let headers = reader.headers().unwrap().clone();
        assert_eq!(&headers[0], "session_id");
        assert_eq!(&headers[2], "z0");
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        // Recompute d0 from the z columns and compare with the d0 column.
        for row in &rows {
            let z: Vec<f64> = (2..4).map(|i| row[i].parse().unwrap()).collect();
            let d0: f64 = row[4].parse().unwrap();
            let expect = (z[0] * z[0] + z[1] * z[1]).sqrt();
            assert!((d0 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn export_empty_corpus_is_header_only() {
        let model = toy_model(vec![0.0], vec![1.0]);
        let corpus = SessionCorpus::new(vec![], SplitTag::Test).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        export_encodings(&model, &corpus, file.path()).unwrap();
        let content = std::fs::read_to_string(file.path()).unwrap();
        assert_eq!(content.lines().count(), 1);
    }

    #[test]
    fn empty_session_rejected() {
        let model = toy_model(vec![0.0], vec![1.0]);
        let session = RawSession {
            id: "empty".into(),
            activities: vec![],
            label: 0,
            cluster_id: None,
        };
        assert!(predict(&model, &session).is_err());
    }
}
