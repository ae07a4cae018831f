//! GRU and LSTM cells, bidirectional layers and deep stacked encoders and
//! decoders.
//!
//! Cells hold parameter ids only; every call takes its state explicitly, so a
//! cell can be reused across sequences, graphs and threads.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamScope};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

#[derive(Clone, Debug)]
enum Gates {
    /// Gate order: update `z`, reset `r`, candidate `h`.
    Gru {
        w: [ParamId; 3],
        u: [ParamId; 3],
        b: [ParamId; 3],
    },
    /// Gate order: input `i`, forget `f`, output `o`, cell candidate `g`.
    Lstm {
        w: [ParamId; 4],
        u: [ParamId; 4],
        b: [ParamId; 4],
    },
}

#[derive(Clone, Debug)]
pub struct RecurrentCell {
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    gates: Gates,
}

/// Recurrent state carried between steps. `cell` is only present for LSTMs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellState {
    pub h: NodeId,
    pub cell: Option<NodeId>,
}

impl RecurrentCell {
    pub fn new(scope: &mut ParamScope<'_>, kind: CellKind, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::config("cell dimensions must be positive"));
        }
        let names: &[&str] = match kind {
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["i", "f", "o", "g"],
        };
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in names {
            w.push(scope.param(&format!("W_{gate}"), &[hidden_dim, input_dim], Init::Glorot)?);
            u.push(scope.param(&format!("U_{gate}"), &[hidden_dim, hidden_dim], Init::Glorot)?);
            b.push(scope.param(&format!("b_{gate}"), &[hidden_dim], Init::Zeros)?);
        }
        let gates = match kind {
            CellKind::Gru => Gates::Gru {
                w: [w[0], w[1], w[2]],
                u: [u[0], u[1], u[2]],
                b: [b[0], b[1], b[2]],
            },
            CellKind::Lstm => Gates::Lstm {
                w: [w[0], w[1], w[2], w[3]],
                u: [u[0], u[1], u[2], u[3]],
                b: [b[0], b[1], b[2], b[3]],
            },
        };
        Ok(Self {
            kind,
            input_dim,
            hidden_dim,
            gates,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        match &self.gates {
            Gates::Gru { w, u, b } => w.iter().chain(u).chain(b).copied().collect(),
            Gates::Lstm { w, u, b } => w.iter().chain(u).chain(b).copied().collect(),
        }
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> CellState {
        let h = g.zeros(&[self.hidden_dim]);
        let cell = match self.kind {
            CellKind::Gru => None,
            CellKind::Lstm => Some(g.zeros(&[self.hidden_dim])),
        };
        CellState { h, cell }
    }

    fn affine(g: &mut Graph<'_>, w: ParamId, x: NodeId, u: ParamId, h: NodeId, b: ParamId) -> Result<NodeId> {
        let (w, u, b) = (g.param(w), g.param(u), g.param(b));
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, h)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    }

    /// One recurrence step.
    ///
    /// GRU (Cho et al. 2014 formulation):
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = z ⊙ h + (1 − z) ⊙ h̃`.
    ///
    /// LSTM: `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
    pub fn step(&self, g: &mut Graph<'_>, state: CellState, x: NodeId) -> Result<CellState> {
        if g.shape(x) != [self.input_dim] {
            return Err(Error::shape("cell step", g.shape(x), &[self.input_dim]));
        }
        match &self.gates {
            Gates::Gru { w, u, b } => {
                let h = state.h;
                let z = Self::affine(g, w[0], x, u[0], h, b[0])?;
                let z = g.sigmoid(z)?;
                let r = Self::affine(g, w[1], x, u[1], h, b[1])?;
                let r = g.sigmoid(r)?;
                let rh = g.mul(r, h)?;
                let cand = Self::affine(g, w[2], x, u[2], rh, b[2])?;
                let cand = g.tanh(cand)?;
                // h' = h̃ + z ⊙ (h − h̃)
                let diff = g.sub(h, cand)?;
                let gated = g.mul(z, diff)?;
                let h_new = g.add(cand, gated)?;
                Ok(CellState { h: h_new, cell: None })
            }
            Gates::Lstm { w, u, b } => {
                let h = state.h;
                let c = state
                    .cell
                    .ok_or_else(|| Error::contract("LSTM step without a cell state"))?;
                let i = Self::affine(g, w[0], x, u[0], h, b[0])?;
                let i = g.sigmoid(i)?;
                let f = Self::affine(g, w[1], x, u[1], h, b[1])?;
                let f = g.sigmoid(f)?;
                let o = Self::affine(g, w[2], x, u[2], h, b[2])?;
                let o = g.sigmoid(o)?;
                let cand = Self::affine(g, w[3], x, u[3], h, b[3])?;
                let cand = g.tanh(cand)?;
                let keep = g.mul(f, c)?;
                let write = g.mul(i, cand)?;
                let c_new = g.add(keep, write)?;
                let squashed = g.tanh(c_new)?;
                let h_new = g.mul(o, squashed)?;
                Ok(CellState {
                    h: h_new,
                    cell: Some(c_new),
                })
            }
        }
    }

    /// Runs the cell over `inputs` from the zero state, returning the hidden
    /// state after each position.
    pub fn run(&self, g: &mut Graph<'_>, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut state = self.zero_state(g);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(g, state, x)?;
            out.push(state.h);
        }
        Ok(out)
    }
}

/// Left-to-right and right-to-left passes over `inputs`, both from zero
/// states. Backward states are returned aligned with input positions.
pub fn run_bidirectional_layer(
    g: &mut Graph<'_>,
    fwd: &RecurrentCell,
    bwd: &RecurrentCell,
    inputs: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    if inputs.is_empty() {
        return Err(Error::contract("bidirectional layer over an empty sequence"));
    }
    let forward = fwd.run(g, inputs)?;
    let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
    let mut backward = bwd.run(g, &reversed)?;
    backward.reverse();
    Ok((forward, backward))
}

#[derive(Clone, Debug)]
pub struct BiLayer {
    pub fwd: RecurrentCell,
    pub bwd: RecurrentCell,
}

impl BiLayer {
    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim() + self.bwd.hidden_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayerStates {
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
    /// `[→h_i ; ←h_i]` after vertical dropout.
    pub output: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct StackedEncoderStates {
    pub layers: Vec<EncoderLayerStates>,
    /// `h_i = [h_i^1 ; … ; h_i^L]` per source position.
    pub combined: Vec<NodeId>,
}

impl StackedEncoderStates {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct StackedEncoder {
    layers: Vec<BiLayer>,
    input_dim: usize,
    dropout: f64,
}

impl StackedEncoder {
    /// Validates the dimension chain: layer 1 reads `input_dim`, layer ℓ reads
    /// the `2 · hidden` output of layer ℓ − 1.
    pub fn new(layers: Vec<BiLayer>, input_dim: usize, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("encoder needs at least one layer"));
        }
        let mut expected = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.fwd.input_dim() != expected || layer.bwd.input_dim() != expected {
                return Err(Error::config(format!(
                    "encoder layer {} reads {} / {} but receives {expected}",
                    i + 1,
                    layer.fwd.input_dim(),
                    layer.bwd.input_dim()
                )));
            }
            expected = layer.output_dim();
        }
        Ok(Self {
            layers,
            input_dim,
            dropout,
        })
    }

    pub fn layers(&self) -> &[BiLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().map(BiLayer::output_dim).sum()
    }

    /// The bottom `n` layers as an encoder of their own.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.layers[..n].to_vec(), self.input_dim, self.dropout)
    }

    pub fn run(&self, g: &mut Graph<'_>, embedded: &[NodeId]) -> Result<StackedEncoderStates> {
        if embedded.is_empty() {
            return Err(Error::contract("encoder over an empty sequence"));
        }
        let mut inputs = embedded.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (forward, backward) = run_bidirectional_layer(g, &layer.fwd, &layer.bwd, &inputs)?;
            let mut output = Vec::with_capacity(inputs.len());
            for (f, b) in forward.iter().zip(&backward) {
                let h = g.concat(&[*f, *b])?;
                output.push(g.dropout(h, self.dropout)?);
            }
            inputs = output.clone();
            layers.push(EncoderLayerStates {
                forward,
                backward,
                output,
            });
        }
        let n = embedded.len();
        let mut combined = Vec::with_capacity(n);
        for i in 0..n {
            let parts: Vec<NodeId> = layers.iter().map(|l| l.output[i]).collect();
            combined.push(g.concat(&parts)?);
        }
        Ok(StackedEncoderStates { layers, combined })
    }
}

#[derive(Clone, Debug)]
pub struct StackedDecoderState {
    /// Recurrent state of each layer (before dropout).
    pub cells: Vec<CellState>,
    /// Each layer's output after vertical dropout.
    pub outputs: Vec<NodeId>,
    /// `s_j = [s_j^1 ; … ; s_j^L′]`.
    pub combined: NodeId,
}

#[derive(Clone, Debug)]
pub struct StackedDecoder {
    /// `W_sj`: embedding → first-layer input.
    embed_proj: ParamId,
    /// `W_sc`: context → first-layer input.
    context_proj: ParamId,
    layers: Vec<RecurrentCell>,
    embed_dim: usize,
    context_dim: usize,
    dropout: f64,
}

impl StackedDecoder {
    pub fn new(
        embed_proj: ParamId,
        context_proj: ParamId,
        layers: Vec<RecurrentCell>,
        embed_dim: usize,
        context_dim: usize,
        dropout: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("decoder needs at least one layer"));
        }
        let mut expected = layers[0].input_dim();
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_dim() != expected {
                return Err(Error::config(format!(
                    "decoder layer {} reads {} but receives {expected}",
                    i + 1,
                    layer.input_dim()
                )));
            }
            expected = layer.hidden_dim();
        }
        Ok(Self {
            embed_proj,
            context_proj,
            layers,
            embed_dim,
            context_dim,
            dropout,
        })
    }

    pub fn layers(&self) -> &[RecurrentCell] {
        &self.layers
    }

    pub fn input_projections(&self) -> (ParamId, ParamId) {
        (self.embed_proj, self.context_proj)
    }

    pub fn state_dim(&self) -> usize {
        self.layers.iter().map(RecurrentCell::hidden_dim).sum()
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> Result<StackedDecoderState> {
        let cells: Vec<CellState> = self.layers.iter().map(|l| l.zero_state(g)).collect();
        let outputs: Vec<NodeId> = cells.iter().map(|c| c.h).collect();
        let combined = g.concat(&outputs)?;
        Ok(StackedDecoderState {
            cells,
            outputs,
            combined,
        })
    }

    /// Advances every layer by one step. Layer 1 reads
    /// `W_sj · E_T[y_{j−1}] + W_sc · c_j`; layer ℓ ≥ 2 reads layer ℓ − 1.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        prev: &StackedDecoderState,
        prev_embedding: NodeId,
        context: NodeId,
    ) -> Result<StackedDecoderState> {
        if prev.cells.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "decoder state has {} layers, decoder has {}",
                prev.cells.len(),
                self.layers.len()
            )));
        }
        if g.shape(prev_embedding) != [self.embed_dim] || g.shape(context) != [self.context_dim] {
            return Err(Error::shape(
                "decoder step",
                g.shape(prev_embedding),
                g.shape(context),
            ));
        }
        let wsj = g.param(self.embed_proj);
        let wsc = g.param(self.context_proj);
        let a = g.matmul(wsj, prev_embedding)?;
        let b = g.matmul(wsc, context)?;
        let mut input = g.add(a, b)?;
        let mut cells = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (layer, state) in self.layers.iter().zip(&prev.cells) {
            let next = layer.step(g, *state, input)?;
            let out = g.dropout(next.h, self.dropout)?;
            cells.push(next);
            outputs.push(out);
            input = out;
        }
        let combined = g.concat(&outputs)?;
        Ok(StackedDecoderState {
            cells,
            outputs,
            combined,
        })
    }
}
