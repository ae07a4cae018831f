use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, DiscriminatorMeta};
use super::objective::{mtl_objective, validate_tasks, TaskBatch, TaskData};
use super::optim::Adam;
use super::plan::{build_mtl_models, MultiTaskModel, SharingPlan};
use super::schedule::Scheduler;
use crate::adversarial::{
    adv1_objective, adv2_objective, extract_shared_reps, DiscriminatorDims, RepLayers, RepValues, SharedReps,
    TaskDiscriminator,
};
use crate::autodiff::{Gradients, Graph, NodeId, ParameterStore};
use crate::error::{Error, Result};
use crate::evaluation::corpus_perplexity;
use crate::rng::{self, Rng};
use crate::seq2seq::ModelDims;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub lambda: f64,
    /// Discriminator updates after each shared-model update.
    pub discriminator_steps: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            discriminator_steps: 1,
            hidden_dim: 200,
            learning_rate: 0.003,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: Adam,
    pub adversarial: Option<AdversarialConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            epochs: 50,
            seed: 1,
            adam: Adam::default(),
            adversarial: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if let Some(a) = &self.adversarial {
            if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
                return Err(Error::config("adversarial lambda must be non-negative"));
            }
            if a.hidden_dim == 0 || a.learning_rate <= 0.0 {
                return Err(Error::config("discriminator hidden size and learning rate must be positive"));
            }
        }
        Ok(())
    }
}

/// Where a training run came from, stored in its checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub config_text: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ModelPhase {
    pub objective: f64,
    pub confusion: Option<f64>,
    /// Shared-layer representations of the batch items with their task ids.
    pub representations: Vec<(RepValues, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Weighted multi-task log-likelihood of the step's batches.
    pub objective: f64,
    /// Weighted entropy term, when adversarial training is on.
    pub confusion: Option<f64>,
    /// Discriminator log-likelihood before its last update.
    pub discriminator: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_objective: f64,
    /// Per task; `None` when the task has no dev data or is not trained.
    pub dev_perplexity: Vec<Option<f64>>,
    /// Learning rates in effect for the next epoch.
    pub learning_rates: Vec<f64>,
    /// Whether this epoch produced a new best main-task model.
    pub improved: bool,
}

struct Adversary {
    disc: TaskDiscriminator,
    layers: RepLayers,
    config: AdversarialConfig,
}

struct Best {
    store: ParameterStore,
    epoch: usize,
    step: u64,
    learning_rates: Vec<f64>,
    best_dev: Vec<Option<f64>>,
}

pub struct TrainOutcome {
    /// Best main-task model by dev perplexity.
    pub best: Checkpoint,
    /// State after the last epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Multi-task training loop: scheduled main + auxiliary updates with Adam,
/// per-task learning-rate halving on dev perplexity, best-model tracking and
/// optional adversarial alternation.
pub struct Trainer<'d> {
    model: MultiTaskModel,
    tasks: &'d [TaskData],
    config: TrainConfig,
    provenance: Provenance,
    scheduler: Scheduler,
    dropout: Option<Rng>,
    learning_rates: Vec<f64>,
    best_dev: Vec<Option<f64>>,
    owners: Vec<Option<usize>>,
    adversary: Option<Adversary>,
    /// Number of leading tasks that take part in training.
    active_tasks: usize,
    epoch: usize,
    step: u64,
    best: Option<Best>,
}

impl<'d> Trainer<'d> {
    /// Fresh models for `tasks`, initialized from the config seed.
    pub fn new(tasks: &'d [TaskData], dims: &[ModelDims], plan: &SharingPlan, config: TrainConfig) -> Result<Self> {
        validate_tasks(tasks)?;
        config.validate()?;
        let mut model = build_mtl_models(dims, plan, config.seed)?;
        let adversary = config
            .adversarial
            .as_ref()
            .map(|a| new_adversary(&mut model, a, config.seed))
            .transpose()?;
        Self::assemble(model, tasks, config, adversary, tasks.len())
    }

    fn assemble(
        model: MultiTaskModel,
        tasks: &'d [TaskData],
        config: TrainConfig,
        adversary: Option<Adversary>,
        active_tasks: usize,
    ) -> Result<Self> {
        if model.num_tasks() != tasks.len() {
            return Err(Error::config(format!(
                "{} task datasets for {} models",
                tasks.len(),
                model.num_tasks()
            )));
        }
        let sizes: Vec<usize> = tasks[..active_tasks].iter().map(|t| t.train.len()).collect();
        let scheduler = Scheduler::new(&sizes, config.batch_size, rng::stream(config.seed, rng::STREAM_SCHEDULE));
        let owners = model.owners();
        Ok(Self {
            learning_rates: vec![config.learning_rate; tasks.len()],
            best_dev: vec![None; tasks.len()],
            dropout: Some(rng::stream(config.seed, rng::STREAM_DROPOUT)),
            model,
            tasks,
            provenance: Provenance::default(),
            scheduler,
            owners,
            adversary,
            active_tasks,
            epoch: 0,
            step: 0,
            best: None,
            config,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn model(&self) -> &MultiTaskModel {
        &self.model
    }

    pub fn store(&self) -> &ParameterStore {
        &self.model.store
    }

    /// Direct access to the parameters, e.g. to inject a fault or restore
    /// values between steps.
    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.model.store
    }

    pub fn discriminator(&self) -> Option<(&TaskDiscriminator, &RepLayers)> {
        self.adversary.as_ref().map(|a| (&a.disc, &a.layers))
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.learning_rates
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.scheduler.steps_per_epoch()
    }

    fn diverged(&self, phase: String, value: f64) -> Error {
        Error::Diverged {
            step: self.step + 1,
            phase,
            value,
        }
    }

    /// One scheduled update of the shared model, followed by the
    /// discriminator updates when adversarial training is on.
    pub fn step(&mut self) -> Result<StepReport> {
        let phase = self.model_phase()?;
        let discriminator = self.discriminator_phase(&phase.representations)?;
        Ok(StepReport {
            objective: phase.objective,
            confusion: phase.confusion,
            discriminator,
        })
    }

    /// Draws the next scheduled batches and takes one Adam step on the
    /// multi-task objective, plus `λ` times the confusion entropy when a
    /// discriminator is present. Discriminator parameters are frozen.
    pub fn model_phase(&mut self) -> Result<ModelPhase> {
        let scheduled = self.scheduler.next_step();
        let mut batches = vec![TaskBatch {
            task: 0,
            items: scheduled.main,
        }];
        if let Some((task, items)) = scheduled.aux {
            batches.push(TaskBatch { task, items });
        }

        let dropout = self.dropout.take().expect("dropout stream present");
        let mut g = Graph::training(&self.model.store, dropout);
        g.set_check_finite(false);
        let obj = mtl_objective(&mut g, &self.model.models, self.tasks, &batches)?;
        for term in &obj.terms {
            let v = g.value(term.log_likelihood).item();
            if !v.is_finite() {
                let name = &self.tasks[term.task].name;
                return Err(self.diverged(format!("multi-task objective, task {} ({name})", term.task), v));
            }
        }
        let objective = g.value(obj.value).item();
        let mut total = obj.value;
        let mut confusion = None;
        let mut representations = Vec::new();
        if let Some(adv) = &self.adversary {
            // Each item's entropy is weighted like its log-likelihood,
            // by 1 / |D_m|.
            let mut weighted = Vec::new();
            for term in &obj.terms {
                let reps = term
                    .forwards
                    .iter()
                    .map(|tf| extract_shared_reps(&mut g, tf, &adv.layers))
                    .collect::<Result<Vec<SharedReps>>>()?;
                let h = adv2_objective(&mut g, &adv.disc, &reps)?;
                weighted.push(g.scale(h, 1.0 / self.tasks[term.task].train.len() as f64)?);
                representations.extend(reps.iter().map(|r| (r.values(&g), term.task)));
            }
            let all = g.concat(&weighted)?;
            let h = g.sum(all)?;
            let hv = g.value(h).item();
            if !hv.is_finite() {
                return Err(self.diverged("confusion entropy".into(), hv));
            }
            confusion = Some(hv);
            let scaled = g.scale(h, adv.config.lambda)?;
            total = g.add(total, scaled)?;
        }
        let loss = g.scale(total, -1.0)?;
        let grads = g.backward(loss)?;
        self.dropout = g.into_rng();
        self.apply(&grads);
        self.step += 1;
        Ok(ModelPhase {
            objective,
            confusion,
            representations,
        })
    }

    /// Discriminator updates on representations from the model phase, with
    /// the representations held constant. Returns the last `adv1` value, or
    /// `None` without a discriminator.
    pub fn discriminator_phase(&mut self, representations: &[(RepValues, usize)]) -> Result<Option<f64>> {
        let Some(adv) = &self.adversary else {
            return Ok(None);
        };
        let mut last = None;
        for _ in 0..adv.config.discriminator_steps {
            let (grads, value) = discriminator_gradients(&self.model.store, &adv.disc, representations)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    phase: "discriminator objective".into(),
                    value,
                });
            }
            let lr = adv.config.learning_rate;
            self.config.adam.update(&mut self.model.store, &grads, |_| lr);
            last = Some(value);
        }
        Ok(last)
    }

    /// Accuracy of the discriminator at naming the task of every dev item,
    /// with representations computed in inference mode.
    pub fn discriminator_dev_accuracy(&self) -> Result<Option<f64>> {
        let Some(adv) = &self.adversary else {
            return Ok(None);
        };
        let mut labeled = Vec::new();
        for (m, task) in self.tasks.iter().enumerate().take(self.active_tasks) {
            for pair in &task.dev {
                let mut g = Graph::new(&self.model.store);
                let tf = self.model.models[m].teacher_force(&mut g, &pair.source, &pair.target)?;
                let reps = extract_shared_reps(&mut g, &tf, &adv.layers)?;
                labeled.push((reps.values(&g), m));
            }
        }
        if labeled.is_empty() {
            return Ok(None);
        }
        adv.disc.accuracy(&self.model.store, &labeled).map(Some)
    }

    fn apply(&mut self, grads: &Gradients) {
        let owners = &self.owners;
        let rates = &self.learning_rates;
        let disc_rate = self
            .adversary
            .as_ref()
            .map_or(self.config.learning_rate, |a| a.config.learning_rate);
        self.config.adam.update(&mut self.model.store, grads, |id| {
            match owners.get(id.index()).copied().flatten() {
                Some(task) => rates[task],
                None => disc_rate,
            }
        });
    }

    /// Dev perplexity of every active task that has dev data.
    pub fn dev_perplexities(&self) -> Result<Vec<Option<f64>>> {
        let mut out = vec![None; self.tasks.len()];
        for (m, task) in self.tasks.iter().enumerate().take(self.active_tasks) {
            if !task.dev.is_empty() {
                out[m] = Some(corpus_perplexity(&self.model.models[m], &self.model.store, &task.dev)?);
            }
        }
        Ok(out)
    }

    /// Runs one pass over the main task, then evaluates on dev data, halves
    /// the learning rate of every task whose dev perplexity exceeds its best
    /// so far, and records a new best main-task model when it improved.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let steps = self.scheduler.steps_per_epoch();
        let mut sum = 0.0;
        for _ in 0..steps {
            sum += self.step()?.objective;
        }
        self.epoch += 1;
        let dev = self.dev_perplexities()?;
        let mut main_improved = false;
        for (m, ppl) in dev.iter().enumerate() {
            let Some(p) = *ppl else { continue };
            if !p.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    phase: format!("dev perplexity of {}", self.tasks[m].name),
                    value: p,
                });
            }
            let improved = record_dev_perplexity(&mut self.best_dev[m], &mut self.learning_rates[m], p);
            main_improved |= improved && m == 0;
        }
        // Without main-task dev data the latest model is the best one.
        let improved = main_improved || dev[0].is_none();
        if improved {
            self.best = Some(Best {
                store: self.model.store.clone(),
                epoch: self.epoch,
                step: self.step,
                learning_rates: self.learning_rates.clone(),
                best_dev: self.best_dev.clone(),
            });
        }
        Ok(EpochRecord {
            epoch: self.epoch,
            steps: self.step,
            mean_objective: sum / steps.max(1) as f64,
            dev_perplexity: dev,
            learning_rates: self.learning_rates.clone(),
            improved,
        })
    }

    /// Trains for the configured number of epochs, or until `on_epoch`
    /// breaks.
    pub fn run(mut self, mut on_epoch: impl FnMut(&EpochRecord, &Trainer<'_>) -> ControlFlow<()>) -> Result<TrainOutcome> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let record = self.run_epoch()?;
            let flow = on_epoch(&record, &self);
            history.push(record);
            if flow.is_break() {
                break;
            }
        }
        let last = self.checkpoint();
        let best = match self.best.take() {
            Some(b) => self.snapshot(b.store, b.epoch, b.step, b.learning_rates, b.best_dev),
            None => last.clone(),
        };
        Ok(TrainOutcome { best, last, history })
    }

    /// The current state as a checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        self.snapshot(
            self.model.store.clone(),
            self.epoch,
            self.step,
            self.learning_rates.clone(),
            self.best_dev.clone(),
        )
    }

    fn snapshot(
        &self,
        store: ParameterStore,
        epoch: usize,
        step: u64,
        learning_rates: Vec<f64>,
        best_dev: Vec<Option<f64>>,
    ) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                plan: self.model.plan.clone(),
                dims: self.model.dims.clone(),
                task_names: self.tasks.iter().map(|t| t.name.clone()).collect(),
                learning_rates,
                best_dev,
                epoch,
                step,
                seed: self.config.seed,
                discriminator: self.adversary.as_ref().map(|a| DiscriminatorMeta {
                    dims: a.disc.dims().clone(),
                    layers: a.layers.clone(),
                }),
                config_hash: self.provenance.config_hash.clone(),
                config_text: self.provenance.config_text.clone(),
            },
            store,
        }
    }
}

/// Applies one epoch's dev perplexity to a task: halves its learning rate when
/// `ppl` is worse than the best so far, records a new best otherwise. Returns
/// whether `ppl` is a new best.
pub fn record_dev_perplexity(best: &mut Option<f64>, learning_rate: &mut f64, ppl: f64) -> bool {
    match *best {
        Some(b) if ppl > b => {
            *learning_rate *= 0.5;
            false
        }
        Some(b) if ppl == b => false,
        _ => {
            *best = Some(ppl);
            true
        }
    }
}

fn new_adversary(model: &mut MultiTaskModel, config: &AdversarialConfig, seed: u64) -> Result<Adversary> {
    let layers = RepLayers::new(model.plan.common_encoder_layers(), model.plan.common_decoder_layers());
    if layers.is_empty() {
        return Err(Error::config(
            "adversarial training needs at least one layer shared by every auxiliary task",
        ));
    }
    let dims = DiscriminatorDims::for_layers(&layers, model.dims[0].hidden_dim, model.num_tasks(), config.hidden_dim);
    let mut r = rng::stream(seed, rng::STREAM_DISC_INIT);
    let disc = TaskDiscriminator::new(&mut model.store, &mut r, &dims)?;
    Ok(Adversary {
        disc,
        layers,
        config: config.clone(),
    })
}

/// Gradients of `-adv1` over constant representations, and `adv1` itself.
fn discriminator_gradients(
    store: &ParameterStore,
    disc: &TaskDiscriminator,
    labeled: &[(RepValues, usize)],
) -> Result<(Gradients, f64)> {
    let mut g = Graph::new(store);
    g.set_check_finite(false);
    let reps: Vec<(SharedReps, usize)> = labeled.iter().map(|(r, t)| (r.constants(&mut g), *t)).collect();
    let obj = adv1_objective(&mut g, disc, &reps)?;
    let value = g.value(obj).item();
    let loss: NodeId = g.scale(obj, -1.0)?;
    Ok((g.backward(loss)?, value))
}

/// Continues training a checkpoint on the main task alone. Auxiliary-only
/// parameters and the discriminator are never touched. The returned best
/// checkpoint is the input itself unless some epoch lowers the main-task dev
/// perplexity.
pub fn adapt(checkpoint: &Checkpoint, tasks: &[TaskData], epochs: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    if epochs == 0 {
        return Ok(TrainOutcome {
            best: checkpoint.clone(),
            last: checkpoint.clone(),
            history: Vec::new(),
        });
    }
    let restored = checkpoint.restore()?;
    if tasks.len() != restored.model.num_tasks() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tasks, {} datasets given",
            restored.model.num_tasks(),
            tasks.len()
        )));
    }
    validate_tasks(&tasks[..1])?;
    let mut config = config.clone();
    config.epochs = epochs;
    config.adversarial = None;
    let mut trainer = Trainer::assemble(restored.model, tasks, config, None, 1)?;
    trainer.learning_rates = checkpoint.meta.learning_rates.clone();
    trainer.epoch = 0;
    trainer.step = checkpoint.meta.step;
    let start_dev = trainer.dev_perplexities()?[0];
    trainer.best_dev[0] = start_dev;
    trainer.best = Some(Best {
        store: checkpoint.store.clone(),
        epoch: 0,
        step: checkpoint.meta.step,
        learning_rates: trainer.learning_rates.clone(),
        best_dev: trainer.best_dev.clone(),
    });
    let mut outcome = trainer.run(|_, _| ControlFlow::Continue(()))?;
    for ck in [&mut outcome.best, &mut outcome.last] {
        ck.meta.discriminator = checkpoint.meta.discriminator.clone();
        ck.meta.config_hash = checkpoint.meta.config_hash.clone();
        ck.meta.config_text = checkpoint.meta.config_text.clone();
    }
    Ok(outcome)
}
