//! Structured training diagnostics as a JSONL stream.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One record of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiagRecord {
    /// Per-batch summary.
    Batch(BatchRecord),
    /// Provenance of one generated candidate.
    Generation(GenerationRecord),
    /// Free-form event (skipped losses, degenerate batches).
    Note(NoteRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub stage: u8,
    pub epoch: usize,
    pub batch: usize,
    pub loss_sup: Option<f64>,
    pub loss_svdd: Option<f64>,
    pub loss_stage2: Option<f64>,
    pub n_generated_similar: usize,
    pub n_generated_diverse: usize,
    pub n_filtered: usize,
    /// Optimizer steps taken for this batch, in order.
    pub steps: Vec<String>,
    /// Pairwise loss terms evaluated for this batch.
    pub pair_invocations: usize,
    /// Anchors skipped because their positive set was empty.
    pub skipped_anchors: usize,
    pub n_normal_members: usize,
    pub n_malicious_members: usize,
    pub n_auxiliary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub stage: u8,
    pub epoch: usize,
    pub batch: usize,
    pub anchor_id: String,
    pub kind: String,
    pub lambda: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub stage: u8,
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

/// Receives diagnostics records as training progresses.
pub trait DiagnosticsSink {
    fn record(&mut self, record: DiagRecord);
}

/// Drops every record.
#[derive(Debug, Default)]
pub struct NullSink;

impl DiagnosticsSink for NullSink {
    fn record(&mut self, _record: DiagRecord) {}
}

/// Collects records in memory; used by tests and to build run summaries.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<DiagRecord>,
}

impl MemorySink {
    pub fn batches(&self) -> impl Iterator<Item = &BatchRecord> {
        self.records.iter().filter_map(|r| match r {
            DiagRecord::Batch(b) => Some(b),
            _ => None,
        })
    }
}

impl DiagnosticsSink for MemorySink {
    fn record(&mut self, record: DiagRecord) {
        self.records.push(record);
    }
}

/// Streams records to a writer, one JSON object per line.
pub struct JsonlSink<W: Write> {
    writer: W,
    error: Option<std::io::Error>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        JsonlSink {
            writer,
            error: None,
        }
    }

    /// Flush and surface any write error encountered while recording.
    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.writer.flush()?;
        Ok(())
    }
}

impl<W: Write> DiagnosticsSink for JsonlSink<W> {
    fn record(&mut self, record: DiagRecord) {
        if self.error.is_some() {
            return;
        }
        let result = serde_json::to_writer(&mut self.writer, &record)
            .map_err(std::io::Error::from)
            .and_then(|()| self.writer.write_all(b"\n"));
        if let Err(e) = result {
            self.error = Some(e);
        }
    }
}

/// Forwards each record to two sinks.
pub struct TeeSink<'a, A: DiagnosticsSink, B: DiagnosticsSink> {
    pub first: &'a mut A,
    pub second: &'a mut B,
}

impl<'a, A: DiagnosticsSink, B: DiagnosticsSink> DiagnosticsSink for TeeSink<'a, A, B> {
    fn record(&mut self, record: DiagRecord) {
        self.first.record(record.clone());
        self.second.record(record);
    }
}
