//! Stacked LSTM session encoder.
//!
//! A session's activity vectors are run through a unidirectional LSTM with
//! `num_layers` hidden layers of equal width; the encoded representation `z`
//! is the arithmetic mean of the top layer's hidden states over time.
//!
//! Training needs gradients of batch losses with respect to both parameters
//! and inputs, so [`LstmEncoder::forward`] returns a cache and
//! [`LstmEncoder::backward`] runs truncated-free BPTT over it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedSession;
use crate::error::{Error, Result};
use crate::scalar::{matvec_acc, matvec_t_acc, outer_acc, Scalar};
use crate::seeding::rng_for;

/// Encoder shape and initialization seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::config(
                "encoder dims and layer count must be positive",
            ));
        }
        Ok(())
    }
}

/// Encoded session representation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSession<S> {
    pub z: Vec<S>,
    pub session_id: String,
    pub label: Option<u8>,
}

/// One LSTM layer's weights. Gate rows are packed `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub w_ih: Vec<S>,
    pub w_hh: Vec<S>,
    pub bias: Vec<S>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl<S: Scalar> LayerParams<S> {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LayerParams {
            w_ih: vec![S::zero(); 4 * hidden_dim * input_dim],
            w_hh: vec![S::zero(); 4 * hidden_dim * hidden_dim],
            bias: vec![S::zero(); 4 * hidden_dim],
            input_dim,
            hidden_dim,
        }
    }

    fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input_dim, hidden_dim);
        let k_ih = S::from_config(1.0 / (input_dim as f64).sqrt());
        let k_hh = S::from_config(1.0 / (hidden_dim as f64).sqrt());
        for w in &mut layer.w_ih {
            *w = rng.gen_range(-k_ih..k_ih);
        }
        for w in &mut layer.w_hh {
            *w = rng.gen_range(-k_hh..k_hh);
        }
        layer
    }
}

/// Per-timestep cache of gate activations and states.
#[derive(Debug, Clone)]
struct StepCache<S> {
    gate_i: Vec<S>,
    gate_f: Vec<S>,
    gate_g: Vec<S>,
    gate_o: Vec<S>,
    cell: Vec<S>,
    hidden: Vec<S>,
}

/// Forward-pass cache for one session, consumed by [`LstmEncoder::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    /// `steps[layer][t]`
    steps: Vec<Vec<StepCache<S>>>,
    inputs: Vec<Vec<S>>,
    z: Vec<S>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn z(&self) -> &[S] {
        &self.z
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.len()
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct EncoderGradients<S> {
    pub layers: Vec<LayerParams<S>>,
}

impl<S: Scalar> EncoderGradients<S> {
    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.w_ih.iter_mut().for_each(|v| *v = S::zero());
            layer.w_hh.iter_mut().for_each(|v| *v = S::zero());
            layer.bias.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Flat view in the same order as [`LstmEncoder::params_mut`].
    pub fn flat_iter(&self) -> impl Iterator<Item = &S> + Clone {
        self.layers
            .iter()
            .flat_map(|l| l.w_ih.iter().chain(l.w_hh.iter()).chain(l.bias.iter()))
    }
}

/// The session encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmEncoder<S> {
    config: EncoderConfig,
    layers: Vec<LayerParams<S>>,
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl<S: Scalar> LstmEncoder<S> {
    /// Uniform fan-in initialization, zero biases, zero initial states.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input_dim = if l == 0 {
                    config.input_dim
                } else {
                    config.hidden_dim
                };
                let mut rng = rng_for(config.seed, &format!("encoder-init/layer{l}"));
                LayerParams::init(input_dim, config.hidden_dim, &mut rng)
            })
            .collect();
        Ok(LstmEncoder { config, layers })
    }

    pub fn from_parts(config: EncoderConfig, layers: Vec<LayerParams<S>>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.num_layers {
            return Err(Error::validation(format!(
                "expected {} layers, got {}",
                config.num_layers,
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let expect_in = if l == 0 {
                config.input_dim
            } else {
                config.hidden_dim
            };
            let h = config.hidden_dim;
            if layer.input_dim != expect_in
                || layer.hidden_dim != h
                || layer.w_ih.len() != 4 * h * expect_in
                || layer.w_hh.len() != 4 * h * h
                || layer.bias.len() != 4 * h
            {
                return Err(Error::validation(format!("layer {l} has wrong shape")));
            }
        }
        Ok(LstmEncoder { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<S>] {
        &self.layers
    }

    pub fn zero_gradients(&self) -> EncoderGradients<S> {
        EncoderGradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.input_dim, l.hidden_dim))
                .collect(),
        }
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w_ih.len() + l.w_hh.len() + l.bias.len())
            .sum()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers.iter_mut().flat_map(|l| {
            l.w_ih
                .iter_mut()
                .chain(l.w_hh.iter_mut())
                .chain(l.bias.iter_mut())
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &S> {
        self.layers
            .iter()
            .flat_map(|l| l.w_ih.iter().chain(l.w_hh.iter()).chain(l.bias.iter()))
    }

    /// Full forward pass, keeping the caches needed for backprop.
    pub fn forward(&self, inputs: &[Vec<S>]) -> Result<ForwardTrace<S>> {
        if inputs.is_empty() {
            return Err(Error::validation("cannot encode an empty sequence"));
        }
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.config.input_dim {
                return Err(Error::validation(format!(
                    "input at position {t} has dim {}, expected {}",
                    x.len(),
                    self.config.input_dim
                )));
            }
        }
        let h = self.config.hidden_dim;
        let seq_len = inputs.len();
        let mut steps: Vec<Vec<StepCache<S>>> = Vec::with_capacity(self.layers.len());

        let mut layer_input: Vec<Vec<S>> = inputs.to_vec();
        for layer in &self.layers {
            let mut caches = Vec::with_capacity(seq_len);
            let mut hidden = vec![S::zero(); h];
            let mut cell = vec![S::zero(); h];
            for x in &layer_input {
                let mut preact = layer.bias.clone();
                matvec_acc(&layer.w_ih, 4 * h, layer.input_dim, x, &mut preact);
                matvec_acc(&layer.w_hh, 4 * h, h, &hidden, &mut preact);

                let mut cache = StepCache {
                    gate_i: vec![S::zero(); h],
                    gate_f: vec![S::zero(); h],
                    gate_g: vec![S::zero(); h],
                    gate_o: vec![S::zero(); h],
                    cell: vec![S::zero(); h],
                    hidden: vec![S::zero(); h],
                };
                for j in 0..h {
                    let gi = sigmoid(preact[j]);
                    let gf = sigmoid(preact[h + j]);
                    let gg = preact[2 * h + j].tanh();
                    let go = sigmoid(preact[3 * h + j]);
                    let c = gf * cell[j] + gi * gg;
                    cache.gate_i[j] = gi;
                    cache.gate_f[j] = gf;
                    cache.gate_g[j] = gg;
                    cache.gate_o[j] = go;
                    cache.cell[j] = c;
                    cache.hidden[j] = go * c.tanh();
                }
                hidden.copy_from_slice(&cache.hidden);
                cell.copy_from_slice(&cache.cell);
                caches.push(cache);
            }
            layer_input = caches.iter().map(|c| c.hidden.clone()).collect();
            steps.push(caches);
        }

        let t_scale = S::one() / S::from_usize(seq_len).unwrap();
        let mut z = vec![S::zero(); h];
        for cache in steps.last().unwrap() {
            for (zi, hi) in z.iter_mut().zip(&cache.hidden) {
                *zi += *hi * t_scale;
            }
        }
        Ok(ForwardTrace {
            steps,
            inputs: inputs.to_vec(),
            z,
        })
    }

    /// Encode a sequence of activity vectors into `z`.
    pub fn encode(&self, inputs: &[Vec<S>]) -> Result<Vec<S>> {
        let trace = self.forward(inputs)?;
        if trace.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("encoder produced non-finite output"));
        }
        Ok(trace.z)
    }

    pub fn encode_session(&self, session: &EmbeddedSession<S>) -> Result<EncodedSession<S>> {
        let z = self.encode(&session.vectors).map_err(|e| {
            Error::validation(format!("session `{}`: {e}", session.id))
        })?;
        Ok(EncodedSession {
            z,
            session_id: session.id.clone(),
            label: Some(session.label),
        })
    }

    /// Encode a batch; elementwise identical to mapping [`Self::encode_session`].
    pub fn encode_batch(&self, sessions: &[EmbeddedSession<S>]) -> Result<Vec<EncodedSession<S>>> {
        sessions.iter().map(|s| self.encode_session(s)).collect()
    }

    /// Backprop `grad_z` (gradient of some scalar loss w.r.t. `z`) through the
    /// trace. Parameter gradients accumulate into `grads`; the returned value
    /// is the gradient with respect to the input sequence.
    pub fn backward(
        &self,
        trace: &ForwardTrace<S>,
        grad_z: &[S],
        grads: &mut EncoderGradients<S>,
    ) -> Vec<Vec<S>> {
        let h = self.config.hidden_dim;
        debug_assert_eq!(grad_z.len(), h);
        let seq_len = trace.seq_len();
        let t_scale = S::one() / S::from_usize(seq_len).unwrap();

        // Gradient flowing into each timestep's hidden state of the layer
        // currently being processed; starts with the mean-pool gradient.
        let mut upstream: Vec<Vec<S>> = (0..seq_len)
            .map(|_| grad_z.iter().map(|g| *g * t_scale).collect())
            .collect();

        for (layer_idx, layer) in self.layers.iter().enumerate().rev() {
            let caches = &trace.steps[layer_idx];
            let layer_grads = &mut grads.layers[layer_idx];
            let mut next_upstream: Vec<Vec<S>> =
                (0..seq_len).map(|_| vec![S::zero(); layer.input_dim]).collect();

            let mut dh_carry = vec![S::zero(); h];
            let mut dc_carry = vec![S::zero(); h];
            let mut d_preact = vec![S::zero(); 4 * h];
            for t in (0..seq_len).rev() {
                let cache = &caches[t];
                let c_prev = if t > 0 { Some(&caches[t - 1].cell) } else { None };
                for j in 0..h {
                    let dh = upstream[t][j] + dh_carry[j];
                    let tc = cache.cell[j].tanh();
                    let go = cache.gate_o[j];
                    let d_o = dh * tc;
                    let dc = dh * go * (S::one() - tc * tc) + dc_carry[j];
                    let gi = cache.gate_i[j];
                    let gf = cache.gate_f[j];
                    let gg = cache.gate_g[j];
                    let d_i = dc * gg;
                    let d_f = match c_prev {
                        Some(prev) => dc * prev[j],
                        None => S::zero(),
                    };
                    let d_g = dc * gi;
                    d_preact[j] = d_i * gi * (S::one() - gi);
                    d_preact[h + j] = d_f * gf * (S::one() - gf);
                    d_preact[2 * h + j] = d_g * (S::one() - gg * gg);
                    d_preact[3 * h + j] = d_o * go * (S::one() - go);
                    dc_carry[j] = dc * gf;
                }

                let x_t = if layer_idx == 0 {
                    &trace.inputs[t]
                } else {
                    &trace.steps[layer_idx - 1][t].hidden
                };
                outer_acc(&mut layer_grads.w_ih, 4 * h, layer.input_dim, &d_preact, x_t);
                if t > 0 {
                    outer_acc(&mut layer_grads.w_hh, 4 * h, h, &d_preact, &caches[t - 1].hidden);
                }
                for (b, d) in layer_grads.bias.iter_mut().zip(&d_preact) {
                    *b += *d;
                }

                matvec_t_acc(&layer.w_ih, 4 * h, layer.input_dim, &d_preact, &mut next_upstream[t]);
                dh_carry.iter_mut().for_each(|v| *v = S::zero());
                matvec_t_acc(&layer.w_hh, 4 * h, h, &d_preact, &mut dh_carry);
            }
            upstream = next_upstream;
        }
        upstream
    }
}
