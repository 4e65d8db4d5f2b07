//! Encoder/decoder translation model: four encoders, an N-layer LSTM
//! decoder with cross-attention, teacher-forced training and greedy
//! decoding.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AttentionKind, ConfigError, EncoderKind, ModelConfig, TrainConfig};
use crate::embeddings::{ner_segment_ids, EmbedError, EmbeddingSet, Pretrained, Vocab, BOS, EOS};
use crate::graph::{Graph, NodeId};
use crate::layers::{add_norm, glu, AddNorm, Attention, Conv1d, LayerNorm, Linear, Lstm, LstmState, Memory};
use crate::params::{read_checkpoint, write_checkpoint, Adam, CheckpointError, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no training pairs")]
    EmptyData,
    #[error("empty source sequence")]
    EmptySource,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (example {example})")]
    NonFinite { epoch: usize, batch: usize, example: usize },
    #[error("decoder step {step} exceeds the limit {max}")]
    StepOverflow { step: usize, max: usize },
    #[error("target of {len} tokens needs more than {max} decoder steps")]
    TargetTooLong { len: usize, max: usize },
    #[error("pretrained vectors have dimension {found}, model needs {expected}")]
    PretrainedDim { expected: usize, found: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

/// Keys and values handed to the decoder, plus the encoder's own
/// self-attention weights when it has any.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub k: NodeId,
    pub v: NodeId,
    pub self_attention: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct BiLstmEncoder {
    forward: Lstm,
    backward: Lstm,
    project: Linear,
    norm: LayerNorm,
    stacked: Vec<(Lstm, LayerNorm)>,
}

#[derive(Debug, Clone)]
struct TransformerBlock {
    attention: Attention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct MhcBlock {
    conv: Conv1d,
    norm1: LayerNorm,
    attention: Attention,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
enum Encoder {
    BiLstm(BiLstmEncoder),
    ConvS2S(Vec<Conv1d>),
    Transformer(Vec<TransformerBlock>),
    Mhc(Vec<MhcBlock>),
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    lstm: Lstm,
    norm_q: LayerNorm,
    attention: Attention,
    norm_out: LayerNorm,
}

/// Recurrent state between decoder steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    /// Post add-norm LSTM output of the last layer at the latest step.
    pub q: Option<NodeId>,
    /// Decoder embedding of the latest input token.
    pub g: Option<NodeId>,
    pub step: usize,
}

/// Attention weights recorded during a teacher-forced pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Encoder self-attention, per block and head: `[M × M]`.
    pub encoder: Vec<Tensor>,
    /// Cross-attention per decoder layer, per head: `[T × M]`, one row per
    /// decoder step.
    pub cross: Vec<Vec<Tensor>>,
}

impl AttentionTrace {
    pub fn all(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.iter().chain(self.cross.iter().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    /// The step limit was reached before EOS.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_exact_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss of the first batch before any update.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

impl TrainReport {
    /// `epoch,loss,val_exact_match` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_exact_match\n");
        for e in &self.history {
            let val = e.val_exact_match.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, val));
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|e| e.loss)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    embeddings: EmbeddingSet,
    encoder: Encoder,
    decoder_embedding: ParamId,
    decoder: Vec<DecoderLayer>,
    output: Linear,
}

fn new_attention(
    store: &mut ParamStore,
    name: &str,
    kind: AttentionKind,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Attention, ConfigError> {
    Attention::new(store, name, kind, cfg.d_model, cfg.heads, cfg.scale_attention, rng).map_err(|e| {
        ConfigError::Heads {
            d_model: e.d,
            heads: e.heads,
        }
    })
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embeddings = EmbeddingSet::new(
            &mut store,
            "embed",
            vocab.len(),
            d,
            config.encoder,
            config.max_source_len,
            config.max_segments,
            &mut rng,
        );
        let conv = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            Conv1d::new(store, name, config.kernel, d, 2 * d, rng).map_err(|_| ConfigError::EvenKernel(config.kernel))
        };
        let encoder = match config.encoder {
            EncoderKind::BiLstm => Encoder::BiLstm(BiLstmEncoder {
                forward: Lstm::new(&mut store, "enc.fwd", d, d, &mut rng),
                backward: Lstm::new(&mut store, "enc.bwd", d, d, &mut rng),
                project: Linear::new(&mut store, "enc.proj", 2 * d, d, true, &mut rng),
                norm: LayerNorm::new(&mut store, "enc.norm0", d),
                stacked: (1..config.n_layers)
                    .map(|l| {
                        (
                            Lstm::new(&mut store, &format!("enc{l}.lstm"), d, d, &mut rng),
                            LayerNorm::new(&mut store, &format!("enc{l}.norm"), d),
                        )
                    })
                    .collect(),
            }),
            EncoderKind::ConvS2S => Encoder::ConvS2S(
                (0..config.n_layers)
                    .map(|l| conv(&mut store, &format!("enc{l}.conv"), &mut rng))
                    .collect::<Result<_, _>>()?,
            ),
            EncoderKind::Transformer => {
                let mut blocks = Vec::new();
                for l in 0..config.n_layers {
                    blocks.push(TransformerBlock {
                        attention: new_attention(&mut store, &format!("enc{l}.att"), AttentionKind::Mha, &config, &mut rng)?,
                        norm1: LayerNorm::new(&mut store, &format!("enc{l}.norm1"), d),
                        ff1: Linear::new(&mut store, &format!("enc{l}.ff1"), d, config.d_ff, true, &mut rng),
                        ff2: Linear::new(&mut store, &format!("enc{l}.ff2"), config.d_ff, d, true, &mut rng),
                        norm2: LayerNorm::new(&mut store, &format!("enc{l}.norm2"), d),
                    });
                }
                Encoder::Transformer(blocks)
            }
            EncoderKind::Mhc => {
                let mut blocks = Vec::new();
                for l in 0..config.n_layers {
                    blocks.push(MhcBlock {
                        conv: conv(&mut store, &format!("enc{l}.conv"), &mut rng)?,
                        norm1: LayerNorm::new(&mut store, &format!("enc{l}.norm1"), d),
                        attention: new_attention(&mut store, &format!("enc{l}.att"), AttentionKind::Mha, &config, &mut rng)?,
                        norm2: LayerNorm::new(&mut store, &format!("enc{l}.norm2"), d),
                    });
                }
                Encoder::Mhc(blocks)
            }
        };
        let data = (0..vocab.len() * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let decoder_embedding = store.add("dec.embed", Tensor::matrix(vocab.len(), d, data));
        let mut decoder = Vec::new();
        for l in 0..config.n_layers {
            decoder.push(DecoderLayer {
                lstm: Lstm::new(&mut store, &format!("dec{l}.lstm"), d, d, &mut rng),
                norm_q: LayerNorm::new(&mut store, &format!("dec{l}.norm_q"), d),
                attention: new_attention(&mut store, &format!("dec{l}.att"), config.attention, &config, &mut rng)?,
                norm_out: LayerNorm::new(&mut store, &format!("dec{l}.norm_out"), d),
            });
        }
        let output = Linear::new(&mut store, "out", d, vocab.len(), true, &mut rng);
        Ok(Model {
            config,
            vocab,
            store,
            embeddings,
            encoder,
            decoder_embedding,
            decoder,
            output,
        })
    }

    /// A model whose vocabulary is `vocab` with encoder word rows copied
    /// from `pretrained` wherever the token is present there.
    pub fn with_pretrained(config: ModelConfig, vocab: Vocab, pretrained: &Pretrained) -> Result<Model, ModelError> {
        let found = pretrained.vectors.cols();
        if found != config.d_model {
            return Err(ModelError::PretrainedDim {
                expected: config.d_model,
                found,
            });
        }
        let mut model = Model::new(config, vocab)?;
        let d = model.config.d_model;
        let word = model.embeddings.word;
        let mut table = model.store.value(word).clone();
        for (i, token) in model.vocab.tokens().iter().enumerate() {
            if let Some(j) = pretrained.vocab.get(token) {
                table.data_mut()[i * d..(i + 1) * d].copy_from_slice(pretrained.vectors.row(j));
            }
        }
        model.store.set_value(word, table);
        Ok(model)
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    /// Embeds and encodes a source token sequence.
    pub fn encode(&self, g: &mut Graph<'_>, source: &[String]) -> Result<EncoderOutput, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptySource);
        }
        let x = self.embeddings.embed(g, &self.vocab, source)?;
        Ok(self.encode_input(g, x))
    }

    /// Runs the encoder stack on already embedded rows.
    pub fn encode_input(&self, g: &mut Graph<'_>, x: NodeId) -> EncoderOutput {
        let mut self_attention = Vec::new();
        let (k, v) = match &self.encoder {
            Encoder::BiLstm(e) => {
                let f = e.forward.sequence(g, x, false);
                let b = e.backward.sequence(g, x, true);
                let both = g.concat_cols(&[f, b]);
                let p = e.project.forward(g, both);
                let mut h = add_norm(g, p, x, &AddNorm::Layer(e.norm.clone()));
                for (lstm, norm) in &e.stacked {
                    let s = lstm.sequence(g, h, false);
                    h = add_norm(g, s, h, &AddNorm::Layer(norm.clone()));
                }
                (h, h)
            }
            Encoder::ConvS2S(blocks) => {
                let mut h = x;
                for conv in blocks {
                    let c = conv.forward(g, h);
                    let y = glu(g, c).expect("conv output is 2d wide");
                    h = add_norm(g, y, h, &AddNorm::Scaled);
                }
                let v = add_norm(g, h, x, &AddNorm::Scaled);
                (h, v)
            }
            Encoder::Transformer(blocks) => {
                let mut h = x;
                for b in blocks {
                    let (a, w) = b.attention.forward(g, h, None, h, h);
                    self_attention.extend(w);
                    let h1 = add_norm(g, a, h, &AddNorm::Layer(b.norm1.clone()));
                    let f = b.ff1.forward(g, h1);
                    let f = g.relu(f);
                    let f = b.ff2.forward(g, f);
                    h = add_norm(g, f, h1, &AddNorm::Layer(b.norm2.clone()));
                }
                (h, h)
            }
            Encoder::Mhc(blocks) => {
                let mut h = x;
                for b in blocks {
                    let c = b.conv.forward(g, h);
                    let y = glu(g, c).expect("conv output is 2d wide");
                    let h1 = add_norm(g, y, h, &AddNorm::Layer(b.norm1.clone()));
                    let (a, w) = b.attention.forward(g, h1, None, h1, h1);
                    self_attention.extend(w);
                    h = add_norm(g, a, h1, &AddNorm::Layer(b.norm2.clone()));
                }
                (h, h)
            }
        };
        EncoderOutput { k, v, self_attention }
    }

    /// Per-layer projected keys and values for the decoder.
    pub fn memories(&self, g: &mut Graph<'_>, enc: &EncoderOutput) -> Vec<Memory> {
        self.decoder.iter().map(|l| l.attention.memory(g, enc.k, enc.v)).collect()
    }

    pub fn start_state(&self, g: &mut Graph<'_>) -> DecoderState {
        DecoderState {
            layers: self.decoder.iter().map(|l| l.lstm.zero_state(g)).collect(),
            q: None,
            g: None,
            step: 0,
        }
    }

    /// One decoder step from `prev` (BOS at the first step). Returns vocab
    /// logits `[1 × |V|]`, the next state and each layer's attention
    /// weights.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        state: &DecoderState,
        prev: usize,
        memories: &[Memory],
    ) -> Result<(NodeId, DecoderState, Vec<Vec<NodeId>>), ModelError> {
        if state.step >= self.config.max_target_len {
            return Err(ModelError::StepOverflow {
                step: state.step,
                max: self.config.max_target_len,
            });
        }
        let table = g.param(self.decoder_embedding);
        let emb = g.gather(table, &[prev])?;
        let mut x = emb;
        let mut layers = Vec::with_capacity(self.decoder.len());
        let mut weights = Vec::with_capacity(self.decoder.len());
        let mut q = x;
        for ((layer, s), mem) in self.decoder.iter().zip(&state.layers).zip(memories) {
            let s2 = layer.lstm.step(g, x, *s);
            q = add_norm(g, s2.h, x, &AddNorm::Layer(layer.norm_q.clone()));
            let (ctx, w) = layer.attention.attend(g, q, Some(emb), mem);
            x = add_norm(g, ctx, q, &AddNorm::Layer(layer.norm_out.clone()));
            layers.push(s2);
            weights.push(w);
        }
        let logits = self.output.forward(g, x);
        let next = DecoderState {
            layers,
            q: Some(q),
            g: Some(emb),
            step: state.step + 1,
        };
        Ok((logits, next, weights))
    }

    /// Teacher-forced decoder over `inputs` (BOS followed by the target
    /// prefix), processed layer by layer. Returns logits `[T × |V|]` and
    /// each layer's attention weights.
    fn decode_teacher_forced(
        &self,
        g: &mut Graph<'_>,
        enc: &EncoderOutput,
        inputs: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, Vec<Vec<NodeId>>), ModelError> {
        let table = g.param(self.decoder_embedding);
        let emb = g.gather(table, inputs)?;
        let mut x = match dropout {
            Some(rng) => self.dropout(g, emb, rng),
            None => emb,
        };
        let mut weights = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let h = layer.lstm.sequence(g, x, false);
            let q = add_norm(g, h, x, &AddNorm::Layer(layer.norm_q.clone()));
            let (ctx, w) = layer.attention.forward(g, q, Some(emb), enc.k, enc.v);
            x = add_norm(g, ctx, q, &AddNorm::Layer(layer.norm_out.clone()));
            weights.push(w);
        }
        Ok((self.output.forward(g, x), weights))
    }

    fn dropout(&self, g: &mut Graph<'_>, x: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let p = self.config.dropout;
        if p == 0.0 {
            return x;
        }
        let shape = g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let mask = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let m = g.input(Tensor::new(shape, mask).expect("mask shape"));
        g.mul(x, m)
    }

    fn teacher_inputs(&self, target: &[String]) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
        if target.len() + 1 > self.config.max_target_len {
            return Err(ModelError::TargetTooLong {
                len: target.len(),
                max: self.config.max_target_len,
            });
        }
        let ids = self.vocab.encode(target);
        let mut inputs = vec![BOS];
        inputs.extend(&ids);
        let mut outputs = ids;
        outputs.push(EOS);
        Ok((inputs, outputs))
    }

    /// Mean token cross-entropy of `target` (+ EOS) given `source`.
    pub fn loss(&self, g: &mut Graph<'_>, source: &[String], target: &[String]) -> Result<NodeId, ModelError> {
        self.loss_with(g, source, target, None)
    }

    fn loss_with(
        &self,
        g: &mut Graph<'_>,
        source: &[String],
        target: &[String],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let (inputs, outputs) = self.teacher_inputs(target)?;
        if source.is_empty() {
            return Err(ModelError::EmptySource);
        }
        let mut x = self.embeddings.embed(g, &self.vocab, source)?;
        if let Some(rng) = dropout.as_deref_mut() {
            x = self.dropout(g, x, rng);
        }
        let enc = self.encode_input(g, x);
        let (logits, _) = self.decode_teacher_forced(g, &enc, &inputs, dropout)?;
        Ok(g.cross_entropy(logits, &outputs)?)
    }

    /// Logits of a teacher-forced pass, `[T × |V|]`.
    pub fn teacher_forced_logits(&self, source: &[String], target: &[String]) -> Result<Tensor, ModelError> {
        let (inputs, _) = self.teacher_inputs(target)?;
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, source)?;
        let (logits, _) = self.decode_teacher_forced(&mut g, &enc, &inputs, None)?;
        Ok(g.value(logits).clone())
    }

    /// Every attention weight matrix of a teacher-forced pass.
    pub fn trace(&self, source: &[String], target: &[String]) -> Result<AttentionTrace, ModelError> {
        let (inputs, _) = self.teacher_inputs(target)?;
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, source)?;
        let (_, cross) = self.decode_teacher_forced(&mut g, &enc, &inputs, None)?;
        Ok(AttentionTrace {
            encoder: enc.self_attention.iter().map(|&n| g.value(n).clone()).collect(),
            cross: cross
                .iter()
                .map(|layer| layer.iter().map(|&n| g.value(n).clone()).collect())
                .collect(),
        })
    }

    /// Argmax decoding from BOS until EOS or the step limit; ties go to the
    /// lowest token id.
    pub fn greedy_decode(&self, source: &[String]) -> Result<Decoded, ModelError> {
        ner_segment_ids(source, self.config.max_segments)?;
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, source)?;
        let memories = self.memories(&mut g, &enc);
        let mut state = self.start_state(&mut g);
        let mut prev = BOS;
        let mut ids = Vec::new();
        loop {
            if state.step >= self.config.max_target_len {
                return Ok(self.decoded(ids, true));
            }
            let (logits, next, _) = self.decode_step(&mut g, &state, prev, &memories)?;
            let best = argmax(g.value(logits).data());
            if best == EOS {
                return Ok(self.decoded(ids, false));
            }
            ids.push(best);
            prev = best;
            state = next;
        }
    }

    fn decoded(&self, ids: Vec<usize>, truncated: bool) -> Decoded {
        Decoded {
            tokens: ids.iter().map(|&i| self.vocab.token(i).to_string()).collect(),
            ids,
            truncated,
        }
    }

    /// Greedy-decodes every source over a frozen parameter set using up to
    /// `threads` workers. Results keep the input order.
    pub fn decode_all(&self, sources: &[Vec<String>], threads: usize) -> Vec<Result<Decoded, ModelError>> {
        let slots: Vec<Mutex<Option<Result<Decoded, ModelError>>>> = sources.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.max(1).min(sources.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(src) = sources.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.greedy_decode(src));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every source decoded"))
            .collect()
    }

    /// Mini-batch Adam with teacher forcing. `on_epoch` runs after every
    /// epoch and may return a validation exact-match score to log.
    pub fn train(
        &mut self,
        pairs: &[(Vec<String>, Vec<String>)],
        cfg: &TrainConfig,
        mut on_epoch: impl FnMut(&Model, &EpochStats) -> Option<f64>,
    ) -> Result<TrainReport, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyData);
        }
        for (_, t) in pairs {
            self.teacher_inputs(t)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut optimizer = Adam::new(cfg.learning_rate);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut report = TrainReport::default();
        let batch_size = cfg.batch_size.max(1);
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (b, batch) in order.chunks(batch_size).enumerate() {
                self.store.zero_grad();
                let mut batch_loss = 0.0;
                for &i in batch {
                    let (src, tgt) = &pairs[i];
                    let use_dropout = self.config.dropout > 0.0;
                    let grads = {
                        let mut g = Graph::new(&self.store);
                        let loss = self.loss_with(&mut g, src, tgt, use_dropout.then_some(&mut rng))?;
                        let value = g.value(loss).item();
                        if !value.is_finite() {
                            return Err(ModelError::NonFinite {
                                epoch,
                                batch: b,
                                example: i,
                            });
                        }
                        batch_loss += value;
                        g.backward(loss)
                    };
                    self.store.accumulate(&grads);
                }
                let n = batch.len() as f64;
                if epoch == 1 && b == 0 {
                    report.initial_loss = batch_loss / n;
                }
                total += batch_loss;
                self.store.scale_grads(1.0 / n);
                if cfg.clip_norm > 0.0 {
                    let norm = self.store.grad_norm();
                    if norm > cfg.clip_norm {
                        self.store.scale_grads(cfg.clip_norm / norm);
                    }
                }
                optimizer.step(&mut self.store);
            }
            let mut stats = EpochStats {
                epoch,
                loss: total / pairs.len() as f64,
                val_exact_match: None,
            };
            stats.val_exact_match = on_epoch(self, &stats);
            report.history.push(stats);
        }
        Ok(report)
    }

    pub fn save(&self, w: &mut impl Write) -> Result<(), ModelError> {
        let header = serde_json::to_string(&Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?;
        write_checkpoint(w, &header, &self.store)?;
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Model, ModelError> {
        let (header, entries) = read_checkpoint(r)?;
        let header: Header = serde_json::from_str(&header)?;
        let mut model = Model::new(header.config, header.vocab)?;
        model.store.load_values(entries)?;
        Ok(model)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn small(encoder: EncoderKind, attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            encoder,
            attention,
            n_layers: 2,
            d_model: 8,
            heads: 2,
            kernel: 3,
            max_target_len: 12,
            d_ff: 16,
            ..Default::default()
        }
    }

    fn vocab() -> Vocab {
        Vocab::from_corpus([toks("who is the spouse of NER ans x NER1 rdf:type film").as_slice()])
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn encoder_contracts() {
        let src = toks("who is the spouse of NER");
        for kind in EncoderKind::ALL {
            let m = Model::new(small(kind, AttentionKind::Ma), vocab()).unwrap();
            let mut g = Graph::new(&m.store);
            let x = m.embeddings.embed(&mut g, &m.vocab, &src).unwrap();
            let enc = m.encode_input(&mut g, x);
            assert_eq!(g.value(enc.k).shape(), &[6, 8]);
            if kind == EncoderKind::ConvS2S {
                let (k, v, x) = (g.value(enc.k), g.value(enc.v), g.value(x));
                assert!(k.max_abs_diff(v) > 1e-6);
                for i in 0..k.len() {
                    let expected = (k.data()[i] + x.data()[i]) * 0.5f64.sqrt();
                    assert!((v.data()[i] - expected).abs() < 1e-14);
                }
            } else {
                assert_eq!(enc.k, enc.v);
            }
        }
    }

    #[test]
    fn convs2s_zero_kernels_scale_residuals() {
        let mut m = Model::new(small(EncoderKind::ConvS2S, AttentionKind::Ma), vocab()).unwrap();
        let Encoder::ConvS2S(blocks) = m.encoder.clone() else { unreachable!() };
        for c in &blocks {
            for id in [c.w, c.b] {
                m.store.get_mut(id).value.data_mut().fill(0.0);
            }
        }
        let mut g = Graph::new(&m.store);
        let x = m.embeddings.embed(&mut g, &m.vocab, &toks("who is NER")).unwrap();
        let enc = m.encode_input(&mut g, x);
        let factor = 0.5f64.powi(blocks.len() as i32).sqrt();
        let expected = g.value(x).map(|v| v * factor);
        assert!(g.value(enc.k).max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn transformer_is_permutation_equivariant() {
        let m = Model::new(small(EncoderKind::Transformer, AttentionKind::Ma), vocab()).unwrap();
        let mut g = Graph::new(&m.store);
        let x = m.embeddings.embed(&mut g, &m.vocab, &toks("who is the spouse of NER")).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let rows: Vec<NodeId> = perm.iter().map(|&p| g.slice_rows(x, p, 1)).collect();
        let px = g.concat_rows(&rows);
        let a = m.encode_input(&mut g, x);
        let b = m.encode_input(&mut g, px);
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((g.value(b.k).get(i, c) - g.value(a.k).get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_path_matches_teacher_forcing() {
        let src = toks("who is the spouse of NER");
        let tgt = toks("NER1 [sep] spouse [sep] ans [sep_end]");
        for enc in EncoderKind::ALL {
            for att in AttentionKind::ALL {
                let m = Model::new(small(enc, att), vocab()).unwrap();
                let forced = m.teacher_forced_logits(&src, &tgt).unwrap();
                let mut g = Graph::new(&m.store);
                let e = m.encode(&mut g, &src).unwrap();
                let mem = m.memories(&mut g, &e);
                let mut state = m.start_state(&mut g);
                let mut prev = BOS;
                for (t, tok) in tgt.iter().enumerate() {
                    let (logits, next, _) = m.decode_step(&mut g, &state, prev, &mem).unwrap();
                    assert_eq!(g.value(logits).cols(), m.vocab.len());
                    for (a, b) in g.value(logits).data().iter().zip(forced.row(t)) {
                        assert!((a - b).abs() < 1e-12, "{enc} {att}");
                    }
                    if att == AttentionKind::Msa {
                        let table = m.store.value(m.decoder_embedding);
                        assert_eq!(g.value(next.g.unwrap()).data(), table.row(prev));
                    }
                    prev = m.vocab.id(tok);
                    state = next;
                }
            }
        }
    }

    #[test]
    fn step_overflow_and_truncation() {
        let mut cfg = small(EncoderKind::Mhc, AttentionKind::Mha);
        cfg.max_target_len = 3;
        let m = Model::new(cfg, vocab()).unwrap();
        let mut g = Graph::new(&m.store);
        let e = m.encode(&mut g, &toks("who")).unwrap();
        let mem = m.memories(&mut g, &e);
        let mut state = m.start_state(&mut g);
        state.step = 3;
        assert!(matches!(
            m.decode_step(&mut g, &state, BOS, &mem),
            Err(ModelError::StepOverflow { step: 3, max: 3 })
        ));
        let d = m.greedy_decode(&toks("who is NER")).unwrap();
        assert!(d.truncated == (d.tokens.len() == 3));
        assert!(matches!(
            m.loss(&mut Graph::new(&m.store), &toks("who"), &toks("a b c")),
            Err(ModelError::TargetTooLong { .. })
        ));
    }

    #[test]
    fn initial_loss_near_uniform() {
        let m = Model::new(small(EncoderKind::Mhc, AttentionKind::Mha), vocab()).unwrap();
        let mut g = Graph::new(&m.store);
        let l = m.loss(&mut g, &toks("who is NER"), &toks("NER1 [sep] spouse")).unwrap();
        let uniform = (m.vocab.len() as f64).ln();
        assert!((g.value(l).item() - uniform).abs() < 0.5, "{} vs {uniform}", g.value(l).item());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::new(small(EncoderKind::BiLstm, AttentionKind::Msa), vocab()).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = Model::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.store, m.store);
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let text = "spouse 1 2 3 4 5 6 7 8\n";
        let p = crate::embeddings::parse_pretrained(text, 0).unwrap();
        let m = Model::with_pretrained(small(EncoderKind::Mhc, AttentionKind::Ma), vocab(), &p).unwrap();
        let row = m.store.value(m.embeddings.word).row(m.vocab.id("spouse")).to_vec();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let bad = crate::embeddings::parse_pretrained("a 1 2\n", 0).unwrap();
        assert!(matches!(
            Model::with_pretrained(small(EncoderKind::Mhc, AttentionKind::Ma), vocab(), &bad),
            Err(ModelError::PretrainedDim { expected: 8, found: 2 })
        ));
    }
}
