use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::seq2seq::{Component, ModelDims, Seq2SeqModel};

/// Layers an auxiliary task shares with the main task (1-based, top of the
/// stack).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSharing {
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
}

impl TaskSharing {
    /// Shares the top `encoder` encoder layers and top `decoder` decoder
    /// layers of stacks with `enc_depth` and `dec_depth` layers.
    pub fn top(encoder: usize, enc_depth: usize, decoder: usize, dec_depth: usize) -> Self {
        Self {
            encoder_layers: (enc_depth + 1 - encoder.min(enc_depth)..=enc_depth).collect(),
            decoder_layers: (dec_depth + 1 - decoder.min(dec_depth)..=dec_depth).collect(),
        }
    }
}

/// Which parameters auxiliary tasks share with the main task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingPlan {
    /// Entry `m - 1` describes auxiliary task `m`.
    pub aux: Vec<TaskSharing>,
    pub share_source_embedding: bool,
    pub share_target_embedding: bool,
    pub share_attention: bool,
    /// `None` follows `share_target_embedding`.
    pub share_output: Option<bool>,
}

impl SharingPlan {
    /// Top-2 encoder and top-1 decoder layers shared for every auxiliary
    /// task; embeddings and output shared, attention private.
    pub fn partial(num_aux: usize, enc_depth: usize, dec_depth: usize) -> Self {
        Self::uniform(num_aux, TaskSharing::top(2, enc_depth, 1, dec_depth))
    }

    pub fn uniform(num_aux: usize, sharing: TaskSharing) -> Self {
        Self {
            aux: vec![sharing; num_aux],
            share_source_embedding: true,
            share_target_embedding: true,
            share_attention: false,
            share_output: None,
        }
    }

    /// Every task keeps its own parameters.
    pub fn private(num_aux: usize) -> Self {
        Self {
            aux: vec![TaskSharing::default(); num_aux],
            share_source_embedding: false,
            share_target_embedding: false,
            share_attention: false,
            share_output: Some(false),
        }
    }

    /// Every component shared: all tasks read one model.
    pub fn full(num_aux: usize, enc_depth: usize, dec_depth: usize) -> Self {
        Self {
            aux: vec![TaskSharing::top(enc_depth, enc_depth, dec_depth, dec_depth); num_aux],
            share_source_embedding: true,
            share_target_embedding: true,
            share_attention: true,
            share_output: Some(true),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.aux.len() + 1
    }

    pub fn shares_output(&self) -> bool {
        self.share_output.unwrap_or(self.share_target_embedding)
    }

    pub fn validate(&self, enc_depth: usize, dec_depth: usize) -> Result<()> {
        for (i, s) in self.aux.iter().enumerate() {
            check_suffix(&s.encoder_layers, enc_depth, "encoder", i + 1)?;
            check_suffix(&s.decoder_layers, dec_depth, "decoder", i + 1)?;
        }
        Ok(())
    }

    fn shares_globally(&self, c: Component) -> bool {
        match c {
            Component::SourceEmbedding => self.share_source_embedding,
            Component::TargetEmbedding => self.share_target_embedding,
            Component::Attention => self.share_attention,
            Component::Output => self.shares_output(),
            Component::EncoderLayer(_) | Component::DecoderLayer(_) => false,
        }
    }

    fn aux_shares(&self, aux_task: usize, c: Component) -> bool {
        let s = &self.aux[aux_task - 1];
        match c {
            Component::EncoderLayer(l) => s.encoder_layers.contains(&l),
            Component::DecoderLayer(l) => s.decoder_layers.contains(&l),
            _ => self.shares_globally(c),
        }
    }

    /// Canonical prefix of `c` for `task`, or `None` when the component is
    /// private to the task.
    pub fn canonical_prefix(&self, task: usize, c: Component) -> Option<String> {
        let shared = if task == 0 {
            (1..self.num_tasks()).any(|m| self.aux_shares(m, c))
        } else {
            self.aux_shares(task, c)
        };
        shared.then(|| format!("shared/{}", c.path()))
    }

    /// Encoder layers shared by every auxiliary task, ascending.
    pub fn common_encoder_layers(&self) -> Vec<usize> {
        common(self.aux.iter().map(|s| &s.encoder_layers))
    }

    /// Decoder layers shared by every auxiliary task, ascending.
    pub fn common_decoder_layers(&self) -> Vec<usize> {
        common(self.aux.iter().map(|s| &s.decoder_layers))
    }
}

fn common<'a>(mut lists: impl Iterator<Item = &'a Vec<usize>>) -> Vec<usize> {
    let Some(first) = lists.next() else {
        return Vec::new();
    };
    let mut out: Vec<usize> = first.clone();
    for l in lists {
        out.retain(|x| l.contains(x));
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn check_suffix(layers: &[usize], depth: usize, side: &str, task: usize) -> Result<()> {
    let mut sorted = layers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != layers.len() {
        return Err(Error::config(format!("task {task}: duplicate shared {side} layers {layers:?}")));
    }
    if let Some(&bad) = sorted.iter().find(|&&l| l == 0 || l > depth) {
        return Err(Error::config(format!(
            "task {task}: shared {side} layer {bad} outside 1..={depth}"
        )));
    }
    let expected: Vec<usize> = (depth + 1 - sorted.len()..=depth).collect();
    if !sorted.is_empty() && sorted != expected {
        return Err(Error::config(format!(
            "task {task}: shared {side} layers {layers:?} are not the top of the stack"
        )));
    }
    Ok(())
}

/// One parameter store holding every task's model.
#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    pub store: ParameterStore,
    pub models: Vec<Seq2SeqModel>,
    pub plan: SharingPlan,
    pub dims: Vec<ModelDims>,
}

/// Builds one model per task over a single store, tying parameters as the
/// plan says. `dims[m]` describes task `m`; all tasks must agree on every
/// architectural field except vocabulary sizes.
pub fn build_mtl_models(dims: &[ModelDims], plan: &SharingPlan, seed: u64) -> Result<MultiTaskModel> {
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    build_with_rng(dims, plan, &mut rng)
}

pub(crate) fn build_with_rng(dims: &[ModelDims], plan: &SharingPlan, rng: &mut Rng) -> Result<MultiTaskModel> {
    if dims.len() != plan.num_tasks() {
        return Err(Error::config(format!(
            "{} tasks declared but the sharing plan covers {}",
            dims.len(),
            plan.num_tasks()
        )));
    }
    let base = &dims[0];
    for (m, d) in dims.iter().enumerate() {
        let same = d.embed_dim == base.embed_dim
            && d.hidden_dim == base.hidden_dim
            && d.attention_dim == base.attention_dim
            && d.encoder_layers == base.encoder_layers
            && d.decoder_layers == base.decoder_layers
            && d.cell == base.cell;
        if !same {
            return Err(Error::config(format!("task {m} architecture differs from the main task")));
        }
    }
    plan.validate(base.encoder_layers, base.decoder_layers)?;
    let mut store = ParameterStore::new();
    let mut models = Vec::with_capacity(dims.len());
    for (m, d) in dims.iter().enumerate() {
        let model = Seq2SeqModel::build(&mut store, rng, d, &format!("task{m}"), |c| plan.canonical_prefix(m, c))?;
        models.push(model);
    }
    Ok(MultiTaskModel {
        store,
        models,
        plan: plan.clone(),
        dims: dims.to_vec(),
    })
}

impl MultiTaskModel {
    pub fn num_tasks(&self) -> usize {
        self.models.len()
    }

    /// Parameters read by more than one task.
    pub fn shared_params(&self) -> Vec<ParamId> {
        let mut count = vec![0usize; self.store.len()];
        for m in &self.models {
            for p in m.params() {
                count[p.index()] += 1;
            }
        }
        self.store.ids().filter(|p| count[p.index()] > 1).collect()
    }

    /// Parameters read only by `task`.
    pub fn private_params(&self, task: usize) -> Vec<ParamId> {
        let shared = self.shared_params();
        self.models[task]
            .params()
            .into_iter()
            .filter(|p| !shared.contains(p))
            .collect()
    }

    /// For each parameter, the lowest task id whose model reads it.
    pub fn owners(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.store.len()];
        for (m, model) in self.models.iter().enumerate() {
            for p in model.params() {
                owner[p.index()].get_or_insert(m);
            }
        }
        owner
    }
}
