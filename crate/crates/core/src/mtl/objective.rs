use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::seq2seq::{Seq2SeqModel, TeacherForced};

/// A source/target id sequence pair. Targets end with `</s>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SentencePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Self {
        Self { source, target }
    }
}

/// One task's data. Task 0 is the main task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub name: String,
    pub weight: f64,
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
}

impl TaskData {
    pub fn new(name: impl Into<String>, train: Vec<SentencePair>, dev: Vec<SentencePair>) -> Self {
        Self {
            name: name.into(),
            weight: 1.0,
            train,
            dev,
        }
    }
}

pub fn validate_tasks(tasks: &[TaskData]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::config("no tasks declared"));
    }
    for (m, t) in tasks.iter().enumerate() {
        if t.train.is_empty() {
            return Err(Error::data(format!("task {m} ({}) has no training data", t.name)));
        }
        if !(t.weight.is_finite() && t.weight >= 0.0) {
            return Err(Error::config(format!("task {m} weight {} must be finite and non-negative", t.weight)));
        }
    }
    Ok(())
}

/// Items of one task's training set that enter an update.
#[derive(Clone, Debug)]
pub struct TaskBatch {
    pub task: usize,
    pub items: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TaskTerm {
    pub task: usize,
    /// `Σ log P(y | x)` over the batch, before weighting.
    pub log_likelihood: NodeId,
    pub forwards: Vec<TeacherForced>,
}

#[derive(Clone, Debug)]
pub struct Objective {
    /// `Σ_m (γ_m / |D_m|) Σ_batch log P(y | x)`.
    pub value: NodeId,
    pub terms: Vec<TaskTerm>,
}

/// The weighted multi-task log-likelihood of the given batches.
pub fn mtl_objective(
    g: &mut Graph<'_>,
    models: &[Seq2SeqModel],
    tasks: &[TaskData],
    batches: &[TaskBatch],
) -> Result<Objective> {
    if !batches.iter().any(|b| b.task == 0 && !b.items.is_empty()) {
        return Err(Error::contract("multi-task objective without a main-task batch"));
    }
    let mut terms = Vec::with_capacity(batches.len());
    let mut weighted = Vec::with_capacity(batches.len());
    for b in batches {
        let task = tasks
            .get(b.task)
            .ok_or_else(|| Error::contract(format!("batch for unknown task {}", b.task)))?;
        let model = &models[b.task];
        let mut forwards = Vec::with_capacity(b.items.len());
        let mut lls = Vec::with_capacity(b.items.len());
        for &i in &b.items {
            let pair = &task.train[i];
            let tf = model.teacher_force(g, &pair.source, &pair.target)?;
            lls.push(tf.log_likelihood);
            forwards.push(tf);
        }
        if lls.is_empty() {
            continue;
        }
        let all = g.concat(&lls)?;
        let ll = g.sum(all)?;
        weighted.push(g.scale(ll, task.weight / task.train.len() as f64)?);
        terms.push(TaskTerm {
            task: b.task,
            log_likelihood: ll,
            forwards,
        });
    }
    let all = g.concat(&weighted)?;
    let value = g.sum(all)?;
    Ok(Objective { value, terms })
}
