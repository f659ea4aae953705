//! Two-stage training orchestrator.
//!
//! Stage 1 walks batches of the training corpus and, per batch, takes one
//! optimizer step on the supervised contrastive loss followed by one on the
//! hypersphere compression loss (alternating optimization; a joint mode sums
//! the two into a single step). Stage 2 re-batches the corpus, generates
//! similar and diverse potential malicious points per malicious anchor,
//! filters diverse candidates against the current normal hypersphere, and
//! steps on the augmented contrastive loss. Finalization freezes the normal
//! center `v0`, its radius, and the malicious center `v1` into the model.

mod diagnostics;
mod optimizer;

pub use diagnostics::{
    BatchRecord, DiagRecord, DiagnosticsSink, GenerationRecord, JsonlSink, MemorySink, NoteRecord,
    NullSink, TeeSink,
};
pub use optimizer::Adam;

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmentation::{
    estimate_hypersphere, generate_diverse, generate_similar, Hypersphere,
};
use crate::embedding::{
    train_activity_embeddings, EmbeddedSession, EmbeddingConfig, EmbeddingTable, OovPolicy,
};
use crate::encoder::{EncodedSession, EncoderConfig, EncoderGradients, ForwardTrace, LayerParams, LstmEncoder};
use crate::error::{Error, Result};
use crate::losses::{deepsvdd_loss, malicious_peers, stage2_loss, sup_contrastive_loss, AnchorGeneration};
use crate::scalar::Scalar;
use crate::seeding::{derive_seed, rng_for};
use crate::sessions::{make_batches, RawSession, SessionCorpus, TrainingBatch};

/// When the normal hypersphere used by the stage-2 filter is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SphereRefresh {
    /// Once per stage-2 epoch from a fixed normal subsample (default).
    #[default]
    PerEpoch,
    /// Before every stage-2 batch.
    PerBatch,
    /// Once, before stage 2 starts, then frozen.
    Frozen,
}

/// Full training configuration. Field names map one-to-one onto CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Training batch size R.
    pub r: usize,
    /// Auxiliary malicious batch size M.
    pub m: usize,
    /// Similar generated set size per anchor.
    pub m_hat: usize,
    /// Maximum diverse candidates drawn per anchor.
    pub m_tilde: usize,
    /// Lower bound of the similar mix coefficient, in [0, 1].
    pub beta1: f64,
    /// Symmetric bound of the diverse mix coefficient.
    pub beta2: f64,
    /// Contrastive temperature.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub min_frequency: usize,
    pub num_layers: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Quantile of normal distances that sets the sphere radius.
    pub sphere_quantile: f64,
    /// Normal-session subsample cap for sphere estimation.
    pub sphere_sample: usize,
    pub sphere_refresh: SphereRefresh,
    pub disable_stage1: bool,
    pub disable_sup: bool,
    pub disable_svdd: bool,
    pub joint_optimization: bool,
    pub disable_stage2: bool,
    pub disable_fp_filter: bool,
    pub disable_similar: bool,
    pub disable_diverse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            r: 100,
            m: 20,
            m_hat: 20,
            m_tilde: 200,
            beta1: 0.92,
            beta2: 4.0,
            alpha: 1.0,
            learning_rate: 0.005,
            epochs_stage1: 10,
            epochs_stage2: 10,
            seed: 17,
            embedding_dim: 50,
            min_frequency: 1,
            num_layers: 2,
            grad_clip: 5.0,
            sphere_quantile: 0.95,
            sphere_sample: 2000,
            sphere_refresh: SphereRefresh::PerEpoch,
            disable_stage1: false,
            disable_sup: false,
            disable_svdd: false,
            joint_optimization: false,
            disable_stage2: false,
            disable_fp_filter: false,
            disable_similar: false,
            disable_diverse: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0
            || self.m == 0
            || self.m_hat == 0
            || self.m_tilde == 0
            || self.epochs_stage1 == 0
            || self.epochs_stage2 == 0
            || self.embedding_dim == 0
            || self.min_frequency == 0
            || self.num_layers == 0
            || self.sphere_sample == 0
        {
            return Err(Error::config("all counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta1) {
            return Err(Error::config("beta1 must be in [0, 1]"));
        }
        if self.beta2 <= 0.0 {
            return Err(Error::config("beta2 must be positive"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::config("alpha must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        if !(self.sphere_quantile > 0.0 && self.sphere_quantile <= 1.0) {
            return Err(Error::config("sphere_quantile must be in (0, 1]"));
        }
        if !self.disable_stage1 && self.disable_sup && self.disable_svdd {
            return Err(Error::config(
                "disable_sup and disable_svdd cannot both be set while stage 1 runs",
            ));
        }
        Ok(())
    }
}

/// Summary frozen into checkpoints and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub stage1_ran: bool,
    pub stage2_ran: bool,
    pub optimizer_steps_stage1: usize,
    pub optimizer_steps_stage2: usize,
    pub n_train_sessions: usize,
    pub n_malicious_train: usize,
    pub embedding_hash: String,
}

/// A trained detector: encoder, embedding table, and the frozen centers.
#[derive(Debug, Clone)]
pub struct TrainedModel<S> {
    pub encoder: LstmEncoder<S>,
    pub table: EmbeddingTable<S>,
    pub v0: Vec<S>,
    pub v1: Vec<S>,
    pub radius: S,
    pub config: TrainConfig,
    pub summary: TrainingSummary,
}

impl<S: Scalar> TrainedModel<S> {
    /// Encode a raw session under the frozen parameters. Unknown tokens map
    /// to the zero vector.
    pub fn encode_session(&self, session: &RawSession) -> Result<Vec<S>> {
        let vectors = self.table.embed_session(session, OovPolicy::Zero)?;
        self.encoder.encode(&vectors)
    }

    /// Distances of an encoding to the normal and malicious centers.
    pub fn center_distances(&self, z: &[S]) -> (S, S) {
        (
            crate::scalar::distance(z, &self.v0),
            crate::scalar::distance(z, &self.v1),
        )
    }
}

/// Report of one stage run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageReport {
    pub optimizer_steps: usize,
    pub batches: usize,
}

/// Orchestrates the two training stages over a prepared corpus.
pub struct Trainer<'a, S> {
    corpus: &'a SessionCorpus,
    config: &'a TrainConfig,
    embedded: Vec<EmbeddedSession<S>>,
    id_index: HashMap<String, usize>,
}

/// Per-batch layout: deduplicated sessions plus slot-level labels. Auxiliary
/// draws may repeat a session; each slot stays a distinct loss element while
/// forward/backward passes run once per unique session.
struct BatchPlan {
    unique: Vec<usize>,
    slot_unique: Vec<usize>,
    labels: Vec<u8>,
    ids: Vec<String>,
    members: usize,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(
        corpus: &'a SessionCorpus,
        config: &'a TrainConfig,
        table: &EmbeddingTable<S>,
    ) -> Result<Self> {
        config.validate()?;
        if corpus.malicious().next().is_none() {
            return Err(Error::config("no malicious sessions in training set"));
        }
        if corpus.normals().next().is_none() {
            return Err(Error::config("no normal sessions in training set"));
        }
        if config.r > corpus.len() {
            return Err(Error::config(format!(
                "batch size R={} exceeds training set size {}",
                config.r,
                corpus.len()
            )));
        }
        let embedded = table.embed_corpus(corpus, OovPolicy::Zero)?;
        let id_index = embedded
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Ok(Trainer {
            corpus,
            config,
            embedded,
            id_index,
        })
    }

    fn plan(&self, batch: &TrainingBatch) -> BatchPlan {
        let slots = batch.members.iter().chain(batch.auxiliary.iter());
        let mut unique = Vec::new();
        let mut seen: HashMap<usize, usize> = HashMap::new();
        let mut slot_unique = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for session in slots {
            let idx = self.id_index[&session.id];
            let u = *seen.entry(idx).or_insert_with(|| {
                unique.push(idx);
                unique.len() - 1
            });
            slot_unique.push(u);
            labels.push(session.label);
            ids.push(session.id.clone());
        }
        BatchPlan {
            unique,
            slot_unique,
            labels,
            ids,
            members: batch.members.len(),
        }
    }

    fn forward_unique(
        &self,
        encoder: &LstmEncoder<S>,
        unique: &[usize],
    ) -> Result<Vec<ForwardTrace<S>>> {
        unique
            .iter()
            .map(|&idx| encoder.forward(&self.embedded[idx].vectors))
            .collect()
    }

    /// Sum slot-level gradients onto unique sessions, backprop, and step.
    fn step_on(
        &self,
        encoder: &mut LstmEncoder<S>,
        adam: &mut Adam<S>,
        grads_buf: &mut EncoderGradients<S>,
        traces: &[ForwardTrace<S>],
        plan_slots: &[usize],
        slot_grads: &[Vec<S>],
    ) {
        let dim = slot_grads[0].len();
        let mut unique_grads = vec![vec![S::zero(); dim]; traces.len()];
        for (slot, grad) in slot_grads.iter().enumerate() {
            let u = plan_slots[slot];
            for (a, g) in unique_grads[u].iter_mut().zip(grad) {
                *a += *g;
            }
        }
        grads_buf.reset();
        for (trace, grad) in traces.iter().zip(&unique_grads) {
            if grad.iter().any(|g| *g != S::zero()) {
                encoder.backward(trace, grad, grads_buf);
            }
        }
        adam.step(encoder.params_mut(), grads_buf.flat_iter());
    }

    /// Stage 1: per batch, a supervised contrastive step then a fresh-forward
    /// DeepSVDD step (or one joint step when `joint_optimization` is set).
    pub fn train_stage1(
        &self,
        encoder: &mut LstmEncoder<S>,
        sink: &mut dyn DiagnosticsSink,
    ) -> Result<StageReport> {
        let config = self.config;
        let alpha = S::from_config(config.alpha);
        let mut adam = Adam::new(
            encoder.param_count(),
            config.learning_rate,
            Some(config.grad_clip),
        );
        let mut grads_buf = encoder.zero_gradients();
        let mut report = StageReport {
            optimizer_steps: 0,
            batches: 0,
        };

        for epoch in 0..config.epochs_stage1 {
            let batches = make_batches(
                self.corpus,
                config.r,
                config.m,
                derive_seed(config.seed, &format!("stage1/epoch{epoch}")),
            )?;
            for (batch_idx, batch) in batches.iter().enumerate() {
                let plan = self.plan(batch);
                let mut record = BatchRecord {
                    stage: 1,
                    epoch,
                    batch: batch_idx,
                    loss_sup: None,
                    loss_svdd: None,
                    loss_stage2: None,
                    n_generated_similar: 0,
                    n_generated_diverse: 0,
                    n_filtered: 0,
                    steps: Vec::new(),
                    pair_invocations: 0,
                    skipped_anchors: 0,
                    n_normal_members: plan.labels[..plan.members]
                        .iter()
                        .filter(|&&y| y == 0)
                        .count(),
                    n_malicious_members: plan.labels[..plan.members]
                        .iter()
                        .filter(|&&y| y == 1)
                        .count(),
                    n_auxiliary: plan.labels.len() - plan.members,
                };

                if config.joint_optimization {
                    self.stage1_joint_step(
                        encoder, &mut adam, &mut grads_buf, &plan, alpha, &mut record, sink,
                    )?;
                } else {
                    self.stage1_alternating_steps(
                        encoder, &mut adam, &mut grads_buf, &plan, alpha, &mut record, sink,
                    )?;
                }
                report.optimizer_steps += record.steps.len();
                report.batches += 1;
                sink.record(DiagRecord::Batch(record));
            }
        }
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn stage1_alternating_steps(
        &self,
        encoder: &mut LstmEncoder<S>,
        adam: &mut Adam<S>,
        grads_buf: &mut EncoderGradients<S>,
        plan: &BatchPlan,
        alpha: S,
        record: &mut BatchRecord,
        sink: &mut dyn DiagnosticsSink,
    ) -> Result<()> {
        if !self.config.disable_sup {
            let traces = self.forward_unique(encoder, &plan.unique)?;
            let encodings: Vec<Vec<S>> = plan
                .slot_unique
                .iter()
                .map(|&u| traces[u].z().to_vec())
                .collect();
            let out = sup_contrastive_loss(&encodings, &plan.labels, plan.members, alpha)?;
            record.loss_sup = Some(out.loss.to_report());
            record.pair_invocations += out.pair_invocations;
            record.skipped_anchors += out.skipped_anchors;
            if out.pair_invocations > 0 {
                self.step_on(encoder, adam, grads_buf, &traces, &plan.slot_unique, &out.grads);
                record.steps.push("sup".into());
            } else {
                sink.record(DiagRecord::Note(NoteRecord {
                    stage: 1,
                    epoch: record.epoch,
                    batch: record.batch,
                    message: "no contrastive pairs; sup step skipped".into(),
                }));
            }
        }

        if !self.config.disable_svdd {
            if record.n_normal_members == 0 {
                sink.record(DiagRecord::Note(NoteRecord {
                    stage: 1,
                    epoch: record.epoch,
                    batch: record.batch,
                    message: "batch has no normal sessions; svdd step skipped".into(),
                }));
            } else {
                // Fresh forward pass over the members with post-sup parameters.
                let member_unique: Vec<usize> = plan.unique.clone();
                let traces = self.forward_unique(encoder, &member_unique)?;
                let member_labels = &plan.labels[..plan.members];
                let encodings: Vec<Vec<S>> = plan.slot_unique[..plan.members]
                    .iter()
                    .map(|&u| traces[u].z().to_vec())
                    .collect();
                let out = deepsvdd_loss(&encodings, member_labels)?;
                record.loss_svdd = Some(out.loss.to_report());
                self.step_on(
                    encoder,
                    adam,
                    grads_buf,
                    &traces,
                    &plan.slot_unique[..plan.members],
                    &out.grads,
                );
                record.steps.push("svdd".into());
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn stage1_joint_step(
        &self,
        encoder: &mut LstmEncoder<S>,
        adam: &mut Adam<S>,
        grads_buf: &mut EncoderGradients<S>,
        plan: &BatchPlan,
        alpha: S,
        record: &mut BatchRecord,
        sink: &mut dyn DiagnosticsSink,
    ) -> Result<()> {
        let traces = self.forward_unique(encoder, &plan.unique)?;
        let encodings: Vec<Vec<S>> = plan
            .slot_unique
            .iter()
            .map(|&u| traces[u].z().to_vec())
            .collect();
        let dim = encodings[0].len();
        let mut slot_grads = vec![vec![S::zero(); dim]; encodings.len()];
        let mut any = false;

        if !self.config.disable_sup {
            let out = sup_contrastive_loss(&encodings, &plan.labels, plan.members, alpha)?;
            record.loss_sup = Some(out.loss.to_report());
            record.pair_invocations += out.pair_invocations;
            record.skipped_anchors += out.skipped_anchors;
            if out.pair_invocations > 0 {
                any = true;
                for (acc, g) in slot_grads.iter_mut().zip(&out.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += *v;
                    }
                }
            }
        }
        if !self.config.disable_svdd {
            if record.n_normal_members == 0 {
                sink.record(DiagRecord::Note(NoteRecord {
                    stage: 1,
                    epoch: record.epoch,
                    batch: record.batch,
                    message: "batch has no normal sessions; svdd term skipped".into(),
                }));
            } else {
                let member_labels = &plan.labels[..plan.members];
                let out = deepsvdd_loss(&encodings[..plan.members], member_labels)?;
                record.loss_svdd = Some(out.loss.to_report());
                any = true;
                for (acc, g) in slot_grads.iter_mut().zip(&out.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += *v;
                    }
                }
            }
        }
        if any {
            self.step_on(encoder, adam, grads_buf, &traces, &plan.slot_unique, &slot_grads);
            record.steps.push("joint".into());
        }
        Ok(())
    }

    /// Normal-session indices used for sphere estimation: a fixed seeded
    /// subsample of at most `sphere_sample` sessions.
    fn sphere_subsample(&self) -> Vec<usize> {
        let mut normals: Vec<usize> = (0..self.corpus.sessions.len())
            .filter(|&i| !self.corpus.sessions[i].is_malicious())
            .collect();
        if normals.len() > self.config.sphere_sample {
            let mut rng = rng_for(self.config.seed, "sphere-subsample");
            normals.shuffle(&mut rng);
            normals.truncate(self.config.sphere_sample);
            normals.sort_unstable();
        }
        normals
    }

    fn estimate_sphere(
        &self,
        encoder: &LstmEncoder<S>,
        subsample: &[usize],
    ) -> Result<Hypersphere<S>> {
        let encodings: Vec<Vec<S>> = subsample
            .iter()
            .map(|&i| encoder.encode(&self.embedded[i].vectors))
            .collect::<Result<_>>()?;
        estimate_hypersphere(&encodings, self.config.sphere_quantile)
    }

    /// Stage 2: augmented contrastive training with the false-positive filter.
    pub fn train_stage2(
        &self,
        encoder: &mut LstmEncoder<S>,
        sink: &mut dyn DiagnosticsSink,
    ) -> Result<StageReport> {
        let config = self.config;
        let alpha = S::from_config(config.alpha);
        let mut adam = Adam::new(
            encoder.param_count(),
            config.learning_rate,
            Some(config.grad_clip),
        );
        let mut grads_buf = encoder.zero_gradients();
        let mut report = StageReport {
            optimizer_steps: 0,
            batches: 0,
        };
        let subsample = self.sphere_subsample();
        let mut sphere = self.estimate_sphere(encoder, &subsample)?;

        for epoch in 0..config.epochs_stage2 {
            if epoch > 0 && config.sphere_refresh == SphereRefresh::PerEpoch {
                sphere = self.estimate_sphere(encoder, &subsample)?;
            }
            let batches = make_batches(
                self.corpus,
                config.r,
                config.m,
                derive_seed(config.seed, &format!("stage2/epoch{epoch}")),
            )?;
            for (batch_idx, batch) in batches.iter().enumerate() {
                if config.sphere_refresh == SphereRefresh::PerBatch {
                    sphere = self.estimate_sphere(encoder, &subsample)?;
                }
                let plan = self.plan(batch);
                let mut record = BatchRecord {
                    stage: 2,
                    epoch,
                    batch: batch_idx,
                    loss_sup: None,
                    loss_svdd: None,
                    loss_stage2: None,
                    n_generated_similar: 0,
                    n_generated_diverse: 0,
                    n_filtered: 0,
                    steps: Vec::new(),
                    pair_invocations: 0,
                    skipped_anchors: 0,
                    n_normal_members: plan.labels[..plan.members]
                        .iter()
                        .filter(|&&y| y == 0)
                        .count(),
                    n_malicious_members: plan.labels[..plan.members]
                        .iter()
                        .filter(|&&y| y == 1)
                        .count(),
                    n_auxiliary: plan.labels.len() - plan.members,
                };

                let traces = self.forward_unique(encoder, &plan.unique)?;
                let sessions: Vec<EncodedSession<S>> = plan
                    .slot_unique
                    .iter()
                    .zip(plan.ids.iter())
                    .zip(plan.labels.iter())
                    .map(|((&u, id), &label)| EncodedSession {
                        z: traces[u].z().to_vec(),
                        session_id: id.clone(),
                        label: Some(label),
                    })
                    .collect();
                let encodings: Vec<Vec<S>> =
                    sessions.iter().map(|s| s.z.clone()).collect();

                let mut generated = Vec::new();
                for anchor_idx in 0..plan.members {
                    if plan.labels[anchor_idx] != 1 {
                        continue;
                    }
                    let peers_idx = malicious_peers(&plan.labels, anchor_idx);
                    let pool: Vec<&EncodedSession<S>> =
                        peers_idx.iter().map(|&j| &sessions[j]).collect();
                    if pool.is_empty() {
                        sink.record(DiagRecord::Note(NoteRecord {
                            stage: 2,
                            epoch,
                            batch: batch_idx,
                            message: format!(
                                "anchor `{}` has no malicious peer in batch",
                                plan.ids[anchor_idx]
                            ),
                        }));
                    }
                    let anchor = &sessions[anchor_idx];
                    let similar = if config.disable_similar || pool.is_empty() {
                        Default::default()
                    } else {
                        generate_similar(
                            anchor,
                            &pool,
                            config.m_hat,
                            config.beta1,
                            derive_seed(
                                config.seed,
                                &format!("aug/e{epoch}/b{batch_idx}/a{anchor_idx}/similar"),
                            ),
                        )?
                    };
                    let diverse = if config.disable_diverse || pool.is_empty() {
                        Default::default()
                    } else {
                        generate_diverse(
                            anchor,
                            &pool,
                            config.m_tilde,
                            config.beta2,
                            &sphere,
                            !config.disable_fp_filter,
                            derive_seed(
                                config.seed,
                                &format!("aug/e{epoch}/b{batch_idx}/a{anchor_idx}/diverse"),
                            ),
                        )?
                    };
                    record.n_generated_similar += similar.encodings.len();
                    record.n_generated_diverse += diverse.encodings.len();
                    record.n_filtered += diverse.filtered();
                    for g in similar.encodings.iter().chain(&diverse.encodings) {
                        sink.record(DiagRecord::Generation(GenerationRecord {
                            stage: 2,
                            epoch,
                            batch: batch_idx,
                            anchor_id: g.anchor_id.clone(),
                            kind: match g.kind {
                                crate::augmentation::GeneratedKind::Similar => "similar".into(),
                                crate::augmentation::GeneratedKind::Diverse => "diverse".into(),
                            },
                            lambda: g.lambda.to_report(),
                            kept: true,
                        }));
                    }
                    for rej in &diverse.rejected {
                        sink.record(DiagRecord::Generation(GenerationRecord {
                            stage: 2,
                            epoch,
                            batch: batch_idx,
                            anchor_id: rej.anchor_id.clone(),
                            kind: "diverse".into(),
                            lambda: rej.lambda.to_report(),
                            kept: false,
                        }));
                    }
                    generated.push(AnchorGeneration {
                        anchor_index: anchor_idx,
                        similar: similar.encodings,
                        diverse: diverse.encodings,
                    });
                }

                let out = stage2_loss(&encodings, &plan.labels, plan.members, &generated, alpha)?;
                record.loss_stage2 = Some(out.loss.to_report());
                record.pair_invocations += out.pair_invocations;
                record.skipped_anchors += out.skipped_anchors;
                if out.pair_invocations > 0 {
                    self.step_on(
                        encoder,
                        &mut adam,
                        &mut grads_buf,
                        &traces,
                        &plan.slot_unique,
                        &out.grads,
                    );
                    record.steps.push("stage2".into());
                } else {
                    sink.record(DiagRecord::Note(NoteRecord {
                        stage: 2,
                        epoch,
                        batch: batch_idx,
                        message: "no malicious anchors; batch contributes nothing".into(),
                    }));
                }
                report.optimizer_steps += record.steps.len();
                report.batches += 1;
                sink.record(DiagRecord::Batch(record));
            }
        }
        Ok(report)
    }

    /// Freeze centers into a [`TrainedModel`]: `v1` from `m` sampled
    /// malicious sessions (all of them when fewer), `v0` and the radius from
    /// every normal training session, all under the final parameters.
    pub fn finalize(
        &self,
        encoder: LstmEncoder<S>,
        table: EmbeddingTable<S>,
        summary: TrainingSummary,
    ) -> Result<TrainedModel<S>> {
        let config = self.config;
        let malicious_idx: Vec<usize> = (0..self.corpus.sessions.len())
            .filter(|&i| self.corpus.sessions[i].is_malicious())
            .collect();
        if malicious_idx.is_empty() {
            return Err(Error::config("no malicious sessions in training set"));
        }
        let chosen: Vec<usize> = if malicious_idx.len() > config.m {
            let mut idx = malicious_idx.clone();
            let mut rng = rng_for(config.seed, "finalize-v1");
            idx.shuffle(&mut rng);
            idx.truncate(config.m);
            idx
        } else {
            malicious_idx
        };
        let malicious_encodings: Vec<Vec<S>> = chosen
            .iter()
            .map(|&i| encoder.encode(&self.embedded[i].vectors))
            .collect::<Result<_>>()?;
        let v1 = crate::scalar::mean_vector(&malicious_encodings);

        let normal_encodings: Vec<Vec<S>> = (0..self.corpus.sessions.len())
            .filter(|&i| !self.corpus.sessions[i].is_malicious())
            .map(|i| encoder.encode(&self.embedded[i].vectors))
            .collect::<Result<_>>()?;
        let sphere = estimate_hypersphere(&normal_encodings, config.sphere_quantile)?;

        Ok(TrainedModel {
            encoder,
            table,
            v0: sphere.center,
            v1,
            radius: sphere.radius,
            config: config.clone(),
            summary,
        })
    }
}

/// Run the full pipeline on a training corpus: embeddings, stage 1, stage 2,
/// finalization. Deterministic for a fixed `(corpus, config)`.
pub fn train<S: Scalar>(
    corpus: &SessionCorpus,
    config: &TrainConfig,
    sink: &mut dyn DiagnosticsSink,
) -> Result<TrainedModel<S>> {
    config.validate()?;
    let table: EmbeddingTable<S> = train_activity_embeddings(
        corpus,
        &EmbeddingConfig {
            dim: config.embedding_dim,
            min_frequency: config.min_frequency,
            ..EmbeddingConfig::default()
        },
        derive_seed(config.seed, "embeddings"),
    )?;
    let trainer = Trainer::new(corpus, config, &table)?;

    let mut encoder: LstmEncoder<S> = LstmEncoder::new(EncoderConfig {
        input_dim: config.embedding_dim,
        hidden_dim: config.embedding_dim,
        num_layers: config.num_layers,
        seed: derive_seed(config.seed, "encoder-init"),
    })?;

    let stage1 = if config.disable_stage1 {
        None
    } else {
        Some(trainer.train_stage1(&mut encoder, sink)?)
    };
    let stage2 = if config.disable_stage2 {
        None
    } else {
        Some(trainer.train_stage2(&mut encoder, sink)?)
    };

    let summary = TrainingSummary {
        stage1_ran: stage1.is_some(),
        stage2_ran: stage2.is_some(),
        optimizer_steps_stage1: stage1.map_or(0, |s| s.optimizer_steps),
        optimizer_steps_stage2: stage2.map_or(0, |s| s.optimizer_steps),
        n_train_sessions: corpus.len(),
        n_malicious_train: corpus.malicious().count(),
        embedding_hash: table.content_hash(),
    };
    trainer.finalize(encoder, table, summary)
}

// ----- checkpoint persistence -----

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    w_ih: Vec<f64>,
    w_hh: Vec<f64>,
    bias: Vec<f64>,
    input_dim: usize,
    hidden_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    encoder_config: EncoderConfig,
    layers: Vec<CheckpointLayer>,
    embedding_dim: usize,
    embedding_min_frequency: usize,
    embedding_rows: Vec<(String, Vec<f64>)>,
    embedding_hash: String,
    v0: Vec<f64>,
    v1: Vec<f64>,
    radius: f64,
    train_config: TrainConfig,
    summary: TrainingSummary,
}

const CHECKPOINT_VERSION: u32 = 1;

impl<S: Scalar> TrainedModel<S> {
    /// Write the model as a self-describing JSON checkpoint. The write is
    /// atomic: a temporary sibling file is renamed into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            encoder_config: self.encoder.config().clone(),
            layers: self
                .encoder
                .layers()
                .iter()
                .map(|l| CheckpointLayer {
                    w_ih: l.w_ih.iter().map(|v| v.to_report()).collect(),
                    w_hh: l.w_hh.iter().map(|v| v.to_report()).collect(),
                    bias: l.bias.iter().map(|v| v.to_report()).collect(),
                    input_dim: l.input_dim,
                    hidden_dim: l.hidden_dim,
                })
                .collect(),
            embedding_dim: self.table.dim(),
            embedding_min_frequency: self.table.min_frequency(),
            embedding_rows: self.table.to_rows(),
            embedding_hash: self.table.content_hash(),
            v0: self.v0.iter().map(|v| v.to_report()).collect(),
            v1: self.v1.iter().map(|v| v.to_report()).collect(),
            radius: self.radius.to_report(),
            train_config: self.config.clone(),
            summary: self.summary.clone(),
        };
        let json = serde_json::to_string(&file).map_err(std::io::Error::from)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        let file: CheckpointFile = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            kind: "checkpoint",
            message: e.to_string(),
        })?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                kind: "checkpoint",
                message: format!("unsupported version {}", file.version),
            });
        }
        let layers: Vec<LayerParams<S>> = file
            .layers
            .into_iter()
            .map(|l| LayerParams {
                w_ih: l.w_ih.into_iter().map(S::from_config).collect(),
                w_hh: l.w_hh.into_iter().map(S::from_config).collect(),
                bias: l.bias.into_iter().map(S::from_config).collect(),
                input_dim: l.input_dim,
                hidden_dim: l.hidden_dim,
            })
            .collect();
        let encoder =
            LstmEncoder::from_parts(file.encoder_config, layers).map_err(|e| Error::Format {
                kind: "checkpoint",
                message: e.to_string(),
            })?;
        let table: EmbeddingTable<S> = EmbeddingTable::from_rows(
            file.embedding_dim,
            file.embedding_min_frequency,
            file.embedding_rows,
        )
        .map_err(|e| Error::Format {
            kind: "checkpoint",
            message: e.to_string(),
        })?;
        if table.content_hash() != file.embedding_hash {
            return Err(Error::Format {
                kind: "checkpoint",
                message: "embedding table hash mismatch".into(),
            });
        }
        let hidden = encoder.config().hidden_dim;
        if file.v0.len() != hidden || file.v1.len() != hidden {
            return Err(Error::Format {
                kind: "checkpoint",
                message: format!(
                    "center dimension {} does not match encoder hidden dim {hidden}",
                    file.v0.len()
                ),
            });
        }
        Ok(TrainedModel {
            encoder,
            table,
            v0: file.v0.into_iter().map(S::from_config).collect(),
            v1: file.v1.into_iter().map(S::from_config).collect(),
            radius: S::from_config(file.radius),
            config: file.train_config,
            summary: file.summary,
        })
    }
}
