//! Attentional encoder-decoder over stacked bidirectional encoders and
//! stacked decoders.
//!
//! Per decoding step `j`:
//!
//! ```text
//! a_ji = v · tanh(W_ae h_i + W_at s_{j-1})      α_j = softmax(a_j)
//! c_j  = Σ_i α_ji h_i
//! s_j  = decoder(s_{j-1}, W_sj E_T[y_{j-1}] + W_sc c_j)
//! r_j  = tanh(s_j + W_rc c_j + W_rj E_T[y_{j-1}])
//! P(y_j) = softmax(W_y r_j + b_r)
//! ```
//!
//! `s_{j-1}` fed to attention is the concatenation of every decoder layer.
//! `W_rc` and `W_rj` project into `dim(s_j)` so the sum in `r_j` is defined.
//! The single-layer recurrence matrix on `s_{j-1}` is the first decoder
//! layer's own recurrent weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamScope, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::recurrent::{
    BiLayer, CellKind, RecurrentCell, StackedDecoder, StackedDecoderState, StackedEncoder, StackedEncoderStates,
};
use crate::rng::Rng;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED_TOKENS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub cell: CellKind,
    pub dropout: f64,
}

impl ModelDims {
    pub fn encoder_state_dim(&self) -> usize {
        2 * self.hidden_dim * self.encoder_layers
    }

    pub fn decoder_state_dim(&self) -> usize {
        self.hidden_dim * self.decoder_layers
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.tgt_vocab <= EOS {
            return Err(Error::config("target vocabulary must contain the reserved tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// The parameter groups of one model, used to decide where each group lives
/// in the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    SourceEmbedding,
    TargetEmbedding,
    /// 1-based encoder layer.
    EncoderLayer(usize),
    /// 1-based decoder layer. Layer 1 also owns `W_sj` and `W_sc`.
    DecoderLayer(usize),
    Attention,
    Output,
}

impl Component {
    /// Path below the task or shared prefix.
    pub fn path(self) -> String {
        match self {
            Component::SourceEmbedding => "src_embed".into(),
            Component::TargetEmbedding => "tgt_embed".into(),
            Component::EncoderLayer(l) => format!("enc/layer{l}"),
            Component::DecoderLayer(l) => format!("dec/layer{l}"),
            Component::Attention => "attention".into(),
            Component::Output => "output".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    dims: ModelDims,
    src_embed: ParamId,
    tgt_embed: ParamId,
    encoder: StackedEncoder,
    decoder: StackedDecoder,
    attn_memory: ParamId,
    attn_query: ParamId,
    attn_score: ParamId,
    out_context: ParamId,
    out_embed: ParamId,
    out_proj: ParamId,
    out_bias: ParamId,
}

/// Encoder output plus the attention keys precomputed for it.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    pub states: StackedEncoderStates,
    /// `[D_enc, n]`.
    memory_t: NodeId,
    /// `[n, A]`, row `i` is `W_ae h_i`.
    keys: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub weights: NodeId,
    pub context: NodeId,
}

#[derive(Clone, Debug)]
pub struct DecodeStep {
    pub logits: NodeId,
    pub state: StackedDecoderState,
    pub attention: Attention,
}

#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// `Σ_j log P(y_j | y_<j, x)`.
    pub log_likelihood: NodeId,
    pub encoded: EncodedSource,
    /// Decoder state after each target position.
    pub decoder_states: Vec<StackedDecoderState>,
}

impl Seq2SeqModel {
    /// Builds a model whose parameters live under `task_prefix`. For each
    /// component, `canonical` returns the prefix the parameters are tied to,
    /// or `None` to keep them private.
    pub fn build(
        store: &mut ParameterStore,
        rng: &mut Rng,
        dims: &ModelDims,
        task_prefix: &str,
        canonical: impl Fn(Component) -> Option<String>,
    ) -> Result<Self> {
        dims.validate()?;
        let h = dims.hidden_dim;
        let enc_dim = dims.encoder_state_dim();
        let dec_dim = dims.decoder_state_dim();

        let place = |c: Component| -> (String, String) {
            let alias = format!("{task_prefix}/{}", c.path());
            let canon = canonical(c).unwrap_or_else(|| alias.clone());
            (alias, canon)
        };

        let (a, c) = place(Component::SourceEmbedding);
        let src_embed = ParamScope::tied(store, rng, &a, &c).param("E", &[dims.src_vocab, dims.embed_dim], Init::Glorot)?;
        let (a, c) = place(Component::TargetEmbedding);
        let tgt_embed = ParamScope::tied(store, rng, &a, &c).param("E", &[dims.tgt_vocab, dims.embed_dim], Init::Glorot)?;

        let mut layers = Vec::with_capacity(dims.encoder_layers);
        let mut input = dims.embed_dim;
        for l in 1..=dims.encoder_layers {
            let (a, c) = place(Component::EncoderLayer(l));
            let mut scope = ParamScope::tied(store, rng, &a, &c);
            let fwd = RecurrentCell::new(&mut scope.child("fwd"), dims.cell, input, h)?;
            let bwd = RecurrentCell::new(&mut scope.child("bwd"), dims.cell, input, h)?;
            layers.push(BiLayer { fwd, bwd });
            input = 2 * h;
        }
        let encoder = StackedEncoder::new(layers, dims.embed_dim, dims.dropout)?;

        let mut cells = Vec::with_capacity(dims.decoder_layers);
        let mut projections = None;
        for l in 1..=dims.decoder_layers {
            let (a, c) = place(Component::DecoderLayer(l));
            let mut scope = ParamScope::tied(store, rng, &a, &c);
            if l == 1 {
                let wsj = scope.param("W_sj", &[h, dims.embed_dim], Init::Glorot)?;
                let wsc = scope.param("W_sc", &[h, enc_dim], Init::Glorot)?;
                projections = Some((wsj, wsc));
            }
            cells.push(RecurrentCell::new(&mut scope, dims.cell, h, h)?);
        }
        let (wsj, wsc) = projections.expect("at least one decoder layer");
        let decoder = StackedDecoder::new(wsj, wsc, cells, dims.embed_dim, enc_dim, dims.dropout)?;

        let (a, c) = place(Component::Attention);
        let mut scope = ParamScope::tied(store, rng, &a, &c);
        let attn_memory = scope.param("W_ae", &[dims.attention_dim, enc_dim], Init::Glorot)?;
        let attn_query = scope.param("W_at", &[dims.attention_dim, dec_dim], Init::Glorot)?;
        let attn_score = scope.param("v", &[dims.attention_dim], Init::Glorot)?;

        let (a, c) = place(Component::Output);
        let mut scope = ParamScope::tied(store, rng, &a, &c);
        let out_context = scope.param("W_rc", &[dec_dim, enc_dim], Init::Glorot)?;
        let out_embed = scope.param("W_rj", &[dec_dim, dims.embed_dim], Init::Glorot)?;
        let out_proj = scope.param("W_y", &[dims.tgt_vocab, dec_dim], Init::Glorot)?;
        let out_bias = scope.param("b_r", &[dims.tgt_vocab], Init::Zeros)?;

        Ok(Self {
            dims: dims.clone(),
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            attn_memory,
            attn_query,
            attn_score,
            out_context,
            out_embed,
            out_proj,
            out_bias,
        })
    }

    /// A model with all parameters private under `prefix`.
    pub fn standalone(store: &mut ParameterStore, rng: &mut Rng, dims: &ModelDims, prefix: &str) -> Result<Self> {
        Self::build(store, rng, dims, prefix, |_| None)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn encoder(&self) -> &StackedEncoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &StackedDecoder {
        &self.decoder
    }

    pub fn attention_params(&self) -> [ParamId; 3] {
        [self.attn_memory, self.attn_query, self.attn_score]
    }

    pub fn output_params(&self) -> [ParamId; 4] {
        [self.out_context, self.out_embed, self.out_proj, self.out_bias]
    }

    pub fn embedding_params(&self) -> [ParamId; 2] {
        [self.src_embed, self.tgt_embed]
    }

    /// Parameters of one component.
    pub fn component_params(&self, c: Component) -> Vec<ParamId> {
        match c {
            Component::SourceEmbedding => vec![self.src_embed],
            Component::TargetEmbedding => vec![self.tgt_embed],
            Component::EncoderLayer(l) => self.encoder.layers()[l - 1].params(),
            Component::DecoderLayer(l) => {
                let mut p = self.decoder.layers()[l - 1].params();
                if l == 1 {
                    let (a, b) = self.decoder.input_projections();
                    p.extend([a, b]);
                }
                p
            }
            Component::Attention => self.attention_params().to_vec(),
            Component::Output => self.output_params().to_vec(),
        }
    }

    pub fn components(&self) -> Vec<Component> {
        let mut out = vec![Component::SourceEmbedding, Component::TargetEmbedding];
        out.extend((1..=self.dims.encoder_layers).map(Component::EncoderLayer));
        out.extend((1..=self.dims.decoder_layers).map(Component::DecoderLayer));
        out.extend([Component::Attention, Component::Output]);
        out
    }

    /// Every distinct parameter the model reads, in a fixed order.
    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = Vec::new();
        for c in self.components() {
            for p in self.component_params(c) {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }

    fn check_tokens(tokens: &[usize], vocab: usize, side: &str) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::contract(format!("empty {side} sequence")));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::contract(format!(
                "{side} token id {t} outside vocabulary of size {vocab}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph<'_>, src: &[usize]) -> Result<EncodedSource> {
        Self::check_tokens(src, self.dims.src_vocab, "source")?;
        let table = g.param(self.src_embed);
        let embedded = src
            .iter()
            .map(|&t| g.lookup(table, t))
            .collect::<Result<Vec<_>>>()?;
        let states = self.encoder.run(g, &embedded)?;
        let memory = g.stack(&states.combined)?;
        let memory_t = g.transpose(memory)?;
        let w_ae = g.param(self.attn_memory);
        let w_ae_t = g.transpose(w_ae)?;
        let keys = g.matmul(memory, w_ae_t)?;
        Ok(EncodedSource {
            states,
            memory_t,
            keys,
        })
    }

    /// Attention of decoder state `prev` (all layers concatenated) over the
    /// encoded source.
    pub fn attend(&self, g: &mut Graph<'_>, enc: &EncodedSource, prev: NodeId) -> Result<Attention> {
        let w_at = g.param(self.attn_query);
        let query = g.matmul(w_at, prev)?;
        let pre = g.add(enc.keys, query)?;
        let act = g.tanh(pre)?;
        let v = g.param(self.attn_score);
        let scores = g.matmul(act, v)?;
        let weights = g.softmax(scores)?;
        let context = g.matmul(enc.memory_t, weights)?;
        Ok(Attention { weights, context })
    }

    pub fn initial_state(&self, g: &mut Graph<'_>) -> Result<StackedDecoderState> {
        self.decoder.zero_state(g)
    }

    /// One decoder step conditioned on `prev_token`; returns unnormalized
    /// scores over the target vocabulary.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        enc: &EncodedSource,
        prev: &StackedDecoderState,
        prev_token: usize,
    ) -> Result<DecodeStep> {
        if prev_token >= self.dims.tgt_vocab {
            return Err(Error::contract(format!(
                "previous token {prev_token} outside target vocabulary of size {}",
                self.dims.tgt_vocab
            )));
        }
        let attention = self.attend(g, enc, prev.combined)?;
        let table = g.param(self.tgt_embed);
        let emb = g.lookup(table, prev_token)?;
        let state = self.decoder.step(g, prev, emb, attention.context)?;

        let w_rc = g.param(self.out_context);
        let w_rj = g.param(self.out_embed);
        let from_ctx = g.matmul(w_rc, attention.context)?;
        let from_emb = g.matmul(w_rj, emb)?;
        let r = g.add(state.combined, from_ctx)?;
        let r = g.add(r, from_emb)?;
        let r = g.tanh(r)?;
        let w_y = g.param(self.out_proj);
        let b_r = g.param(self.out_bias);
        let logits = g.matmul(w_y, r)?;
        let logits = g.add(logits, b_r)?;
        Ok(DecodeStep {
            logits,
            state,
            attention,
        })
    }

    /// Teacher-forced pass over `tgt`, which must end with `</s>`.
    pub fn teacher_force(&self, g: &mut Graph<'_>, src: &[usize], tgt: &[usize]) -> Result<TeacherForced> {
        Self::check_tokens(tgt, self.dims.tgt_vocab, "target")?;
        let encoded = self.encode(g, src)?;
        let mut state = self.initial_state(g)?;
        let mut prev = BOS;
        let mut losses = Vec::with_capacity(tgt.len());
        let mut decoder_states = Vec::with_capacity(tgt.len());
        for &y in tgt {
            let step = self.decode_step(g, &encoded, &state, prev)?;
            losses.push(g.pick_neg_log_softmax(step.logits, y)?);
            state = step.state;
            decoder_states.push(state.clone());
            prev = y;
        }
        let all = g.concat(&losses)?;
        let nll = g.sum(all)?;
        let log_likelihood = g.scale(nll, -1.0)?;
        Ok(TeacherForced {
            log_likelihood,
            encoded,
            decoder_states,
        })
    }

    pub fn sentence_log_likelihood(&self, g: &mut Graph<'_>, src: &[usize], tgt: &[usize]) -> Result<NodeId> {
        Ok(self.teacher_force(g, src, tgt)?.log_likelihood)
    }

    /// Greedy decoding in inference mode. Emits the argmax token at each
    /// step (ties go to the lowest id) and stops after `</s>` or `max_len`
    /// tokens; a final `</s>` is included in the output.
    pub fn greedy_decode(&self, store: &ParameterStore, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::contract("max_len must be at least 1"));
        }
        let mut g = Graph::new(store);
        let enc = self.encode(&mut g, src)?;
        let mut state = self.initial_state(&mut g)?;
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = self.decode_step(&mut g, &enc, &state, prev)?;
            let y = g.value(step.logits).argmax();
            out.push(y);
            if y == EOS {
                break;
            }
            state = step.state;
            prev = y;
        }
        Ok(out)
    }

    /// Per-step target distributions under teacher forcing, in inference mode.
    pub fn teacher_forced_distributions(&self, store: &ParameterStore, src: &[usize], tgt: &[usize]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new(store);
        let enc = self.encode(&mut g, src)?;
        let mut state = self.initial_state(&mut g)?;
        let mut prev = BOS;
        let mut out = Vec::with_capacity(tgt.len());
        for &y in tgt {
            let step = self.decode_step(&mut g, &enc, &state, prev)?;
            let p = g.softmax(step.logits)?;
            out.push(g.value(p).clone());
            state = step.state;
            prev = y;
        }
        Ok(out)
    }
}

/// Drops a trailing `</s>` from a decoded sequence.
pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}
