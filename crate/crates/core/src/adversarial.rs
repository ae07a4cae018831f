//! Task discriminator over shared-layer representations and the two
//! adversarial terms.
//!
//! The discriminator summarizes the shared encoder states and the shared
//! decoder states of one item with an LSTM each, concatenates the two final
//! hidden states into `h_d` and predicts `softmax(W_d h_d + b_d)` over tasks.
//! `adv1` trains it on detached representations; `adv2` is the entropy of its
//! prediction with the discriminator frozen.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamScope, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::recurrent::{CellKind, RecurrentCell};
use crate::rng::Rng;
use crate::seq2seq::TeacherForced;

pub const DISC_PREFIX: &str = "disc";

/// Which layers feed the discriminator (1-based, ascending).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepLayers {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl RepLayers {
    pub fn new(mut encoder: Vec<usize>, mut decoder: Vec<usize>) -> Self {
        encoder.sort_unstable();
        decoder.sort_unstable();
        Self { encoder, decoder }
    }

    pub fn is_empty(&self) -> bool {
        self.encoder.is_empty() && self.decoder.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorDims {
    pub num_tasks: usize,
    /// Width of one encoder-side input vector, absent when no encoder layer
    /// is shared.
    pub encoder_input: Option<usize>,
    pub decoder_input: Option<usize>,
    pub hidden_dim: usize,
}

impl DiscriminatorDims {
    pub fn for_layers(layers: &RepLayers, hidden: usize, num_tasks: usize, disc_hidden: usize) -> Self {
        let enc = layers.encoder.len() * 2 * hidden;
        let dec = layers.decoder.len() * hidden;
        Self {
            num_tasks,
            encoder_input: (enc > 0).then_some(enc),
            decoder_input: (dec > 0).then_some(dec),
            hidden_dim: disc_hidden,
        }
    }

    pub fn summary_dim(&self) -> usize {
        let sides = self.encoder_input.is_some() as usize + self.decoder_input.is_some() as usize;
        sides * self.hidden_dim
    }
}

/// Shared-layer states of one item: per source position the concatenation of
/// the shared encoder layers' outputs, per target position the same for
/// decoder layers.
#[derive(Clone, Debug, Default)]
pub struct SharedReps {
    pub encoder: Vec<NodeId>,
    pub decoder: Vec<NodeId>,
}

/// [`SharedReps`] copied out of a graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepValues {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

impl SharedReps {
    pub fn values(&self, g: &Graph<'_>) -> RepValues {
        RepValues {
            encoder: self.encoder.iter().map(|&n| g.value(n).clone()).collect(),
            decoder: self.decoder.iter().map(|&n| g.value(n).clone()).collect(),
        }
    }

    fn detached(&self, g: &mut Graph<'_>) -> SharedReps {
        SharedReps {
            encoder: self.encoder.iter().map(|&n| g.detach(n)).collect(),
            decoder: self.decoder.iter().map(|&n| g.detach(n)).collect(),
        }
    }
}

impl RepValues {
    pub fn constants(&self, g: &mut Graph<'_>) -> SharedReps {
        SharedReps {
            encoder: self.encoder.iter().map(|t| g.constant(t.clone())).collect(),
            decoder: self.decoder.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

pub fn extract_shared_reps(g: &mut Graph<'_>, tf: &TeacherForced, layers: &RepLayers) -> Result<SharedReps> {
    let mut reps = SharedReps::default();
    if !layers.encoder.is_empty() {
        let enc = &tf.encoded.states;
        for i in 0..enc.len() {
            let parts: Vec<NodeId> = layers.encoder.iter().map(|&l| enc.layers[l - 1].output[i]).collect();
            reps.encoder.push(g.concat(&parts)?);
        }
    }
    if !layers.decoder.is_empty() {
        for state in &tf.decoder_states {
            let parts: Vec<NodeId> = layers.decoder.iter().map(|&l| state.outputs[l - 1]).collect();
            reps.decoder.push(g.concat(&parts)?);
        }
    }
    Ok(reps)
}

#[derive(Clone, Debug)]
pub struct TaskDiscriminator {
    dims: DiscriminatorDims,
    encoder_rnn: Option<RecurrentCell>,
    decoder_rnn: Option<RecurrentCell>,
    classifier: ParamId,
    bias: ParamId,
}

impl TaskDiscriminator {
    pub fn new(store: &mut ParameterStore, rng: &mut Rng, dims: &DiscriminatorDims) -> Result<Self> {
        if dims.num_tasks < 2 {
            return Err(Error::config("the discriminator needs at least two tasks"));
        }
        if dims.summary_dim() == 0 || dims.hidden_dim == 0 {
            return Err(Error::config("the discriminator has no shared layers to read"));
        }
        let mut scope = ParamScope::new(store, rng, DISC_PREFIX);
        let encoder_rnn = dims
            .encoder_input
            .map(|d| RecurrentCell::new(&mut scope.child("enc"), CellKind::Lstm, d, dims.hidden_dim))
            .transpose()?;
        let decoder_rnn = dims
            .decoder_input
            .map(|d| RecurrentCell::new(&mut scope.child("dec"), CellKind::Lstm, d, dims.hidden_dim))
            .transpose()?;
        let classifier = scope.param("W_d", &[dims.num_tasks, dims.summary_dim()], Init::Glorot)?;
        let bias = scope.param("b_d", &[dims.num_tasks], Init::Zeros)?;
        Ok(Self {
            dims: dims.clone(),
            encoder_rnn,
            decoder_rnn,
            classifier,
            bias,
        })
    }

    pub fn dims(&self) -> &DiscriminatorDims {
        &self.dims
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for rnn in [&self.encoder_rnn, &self.decoder_rnn].into_iter().flatten() {
            out.extend(rnn.params());
        }
        out.extend([self.classifier, self.bias]);
        out
    }

    pub fn classifier_params(&self) -> [ParamId; 2] {
        [self.classifier, self.bias]
    }

    /// `h_d`: final hidden states of the two summarizing LSTMs.
    pub fn summary(&self, g: &mut Graph<'_>, rep: &SharedReps) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(2);
        for (rnn, seq, side) in [
            (&self.encoder_rnn, &rep.encoder, "encoder"),
            (&self.decoder_rnn, &rep.decoder, "decoder"),
        ] {
            if let Some(rnn) = rnn {
                if seq.is_empty() {
                    return Err(Error::contract(format!("empty {side}-side representation")));
                }
                let states = rnn.run(g, seq)?;
                parts.push(*states.last().expect("nonempty"));
            }
        }
        g.concat(&parts)
    }

    pub fn logits(&self, g: &mut Graph<'_>, rep: &SharedReps) -> Result<NodeId> {
        let h = self.summary(g, rep)?;
        let w = g.param(self.classifier);
        let b = g.param(self.bias);
        let z = g.matmul(w, h)?;
        g.add(z, b)
    }

    /// `P(task | h_d)`.
    pub fn discriminate(&self, g: &mut Graph<'_>, rep: &SharedReps) -> Result<NodeId> {
        let z = self.logits(g, rep)?;
        g.softmax(z)
    }

    /// Most probable task, ties to the lowest id.
    pub fn predict(&self, store: &ParameterStore, rep: &RepValues) -> Result<usize> {
        let mut g = Graph::new(store);
        let r = rep.constants(&mut g);
        let z = self.logits(&mut g, &r)?;
        Ok(g.value(z).argmax())
    }

    pub fn accuracy(&self, store: &ParameterStore, labeled: &[(RepValues, usize)]) -> Result<f64> {
        if labeled.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for (rep, task) in labeled {
            if self.predict(store, rep)? == *task {
                correct += 1;
            }
        }
        Ok(correct as f64 / labeled.len() as f64)
    }
}

/// `Σ log P(task | h_d)` over labeled items. Representations are detached, so
/// gradients reach only the discriminator.
pub fn adv1_objective(g: &mut Graph<'_>, disc: &TaskDiscriminator, labeled: &[(SharedReps, usize)]) -> Result<NodeId> {
    if labeled.is_empty() {
        return Err(Error::contract("adversarial objective over an empty batch"));
    }
    let mut terms = Vec::with_capacity(labeled.len());
    for (rep, task) in labeled {
        if *task >= disc.dims.num_tasks {
            return Err(Error::contract(format!("task id {task} outside 0..{}", disc.dims.num_tasks)));
        }
        let rep = rep.detached(g);
        let z = disc.logits(g, &rep)?;
        terms.push(g.pick_neg_log_softmax(z, *task)?);
    }
    let all = g.concat(&terms)?;
    let nll = g.sum(all)?;
    g.scale(nll, -1.0)
}

/// `Σ H[P(· | h_d)]` over items. Freezes the discriminator's parameters in
/// `g`, so gradients reach only the representations.
pub fn adv2_objective(g: &mut Graph<'_>, disc: &TaskDiscriminator, reps: &[SharedReps]) -> Result<NodeId> {
    if reps.is_empty() {
        return Err(Error::contract("adversarial objective over an empty batch"));
    }
    g.freeze(disc.params());
    let mut terms = Vec::with_capacity(reps.len());
    for rep in reps {
        let p = disc.discriminate(g, rep)?;
        terms.push(g.entropy(p)?);
    }
    let all = g.concat(&terms)?;
    g.sum(all)
}
